from .augment import (
    AugmentedPairs,
    ExpansionSet,
    augment_training_set,
    build_expansion_sets,
    mirror,
    rotate,
)
from .faces import align_and_crop, detect_landmarks, similarity_transform, template
from .manifest import Manifest, Sample, load_manifest, resolve_apex, write_manifest
from .preprocess import load_image_tensor, preprocess_manifest
from .synthetic import generate_synthetic_dataset

__all__ = [
    "AugmentedPairs",
    "ExpansionSet",
    "Manifest",
    "Sample",
    "align_and_crop",
    "augment_training_set",
    "build_expansion_sets",
    "detect_landmarks",
    "generate_synthetic_dataset",
    "load_image_tensor",
    "load_manifest",
    "mirror",
    "preprocess_manifest",
    "resolve_apex",
    "rotate",
    "similarity_transform",
    "template",
    "write_manifest",
]
