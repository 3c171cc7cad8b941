import csv
import json

import pytest

from moext.cli import build_parser, main

SUBCOMMANDS = ["synth", "preprocess", "pretrain", "finetune", "evaluate", "flow"]
SMALL_FLAGS = ["--width", "0.0625", "--input-downsample", "4"]


def error_line(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_synth_writes_twenty_rows(tmp_path, capsys):
    assert main(["synth", "--subjects", "4", "--clips", "5", "--classes", "3", "--seed", "7",
                 "--out", str(tmp_path / "d")]) == 0
    rows = list(csv.reader((tmp_path / "d" / "manifest.csv").open()))
    assert len(rows) == 21
    assert len((tmp_path / "d" / "config_hash.txt").read_text().strip()) == 64
    assert (tmp_path / "d" / "run_config.ini").exists()


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_global_flags(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--out", "--jobs", "--deterministic"):
        assert flag in out


def test_help_lists_every_declared_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_unknown_flag_rejected(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--definitely-not-a-flag"])
    assert info.value.code == 2


def test_cde_without_samm_is_missing_dataset(synth_small, tmp_path, capsys):
    code = main(["evaluate", "--protocol", "CDE_3", "--manifest", str(synth_small["proc"] / "manifest.csv"),
                 "--out", str(tmp_path / "e")])
    assert code == 5
    err = error_line(capsys)
    assert err["error"] == "MissingDatasetError" and "SAMM" in err["message"]


def test_missing_manifest_and_bad_config(tmp_path, capsys):
    assert main(["pretrain", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 3
    assert error_line(capsys)["error"] == "MissingFileError"
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nunknown_key = 1\n")
    assert main(["synth", "--config", str(bad), "--subjects", "1", "--clips", "1", "--classes", "2",
                 "--out", str(tmp_path / "s")]) == 4
    assert error_line(capsys)["error"] == "ConfigError"


def test_flow_command(synth_small, tmp_path, capsys):
    clip = synth_small["macro"].samples[0].frames_dir
    assert main(["flow", "--frames-dir", str(clip), "--out", str(tmp_path / "f")]) == 0
    lines = (tmp_path / "f" / "flow.csv").read_text().splitlines()
    assert lines[0] == "frame_idx,mean_magnitude,mean_angle_rad"
    assert len(lines) - 1 == len(synth_small["macro"].samples[0].frame_paths) - 1
    assert (tmp_path / "f" / "flow.png").exists()


def test_pipeline_commands_and_reproducible_report(synth_small, tmp_path, capsys):
    proc = synth_small["proc"]
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 3\n[finetune]\nbatch_size = 8\nlearning_rate = 0.001\naugment = false\n")
    pt = ["pretrain", "--config", str(cfg), "--manifest", str(proc / "manifest.csv"),
          "--manifest", str(proc / "macro_manifest.csv"), "--epochs", "1", "--batch-size", "6",
          "--learning-rate", "0.005", "--no-augment", *SMALL_FLAGS, "--out", str(tmp_path / "pt")]
    assert main(pt) == 0
    ckpt = tmp_path / "pt" / "pretrain.ckpt"
    assert ckpt.exists() and (tmp_path / "pt" / "pretrain_history.csv").exists()
    assert main(["finetune", "--config", str(cfg), "--manifest", str(proc / "manifest.csv"),
                 "--pretrain-checkpoint", str(ckpt), "--epochs", "1", "--out", str(tmp_path / "ft")]) == 0
    assert (tmp_path / "ft" / "finetune.ckpt").exists()
    reports = []
    for run in ("ev1", "ev2"):
        assert main(["evaluate", "--config", str(cfg), "--protocol", "SDE_SYNTH",
                     "--manifest", str(proc / "manifest.csv"), "--pretrain-checkpoint", str(ckpt),
                     "--epochs", "1", "--no-plots", "--out", str(tmp_path / run)]) == 0
        reports.append((tmp_path / run / "report.json").read_bytes())
    assert reports[0] == reports[1]
    report = json.loads(reports[0])
    assert report["config_hash"] == (tmp_path / "ev1" / "config_hash.txt").read_text().strip()
    assert report["pretrain_mode"] == "checkpoint" and report["n_folds"] == 3
    header = (tmp_path / "ev1" / "summary.csv").read_text().splitlines()[0]
    assert header == "protocol,dataset,uf1,uar,acc,n_samples"
