import csv
import dataclasses
from pathlib import Path

import pytest

from spgan_kit.cli import build_parser, main, resolve_config
from spgan_kit.compare import ComparisonReport, ResultRow
from spgan_kit.config import (
    ConfigError,
    RunConfig,
    dump_config,
    load_config,
    parse_config_text,
    stage_seed,
)
from spgan_kit.dataset import load_manifest
from spgan_kit.reid import evaluate_tables, extract_features, train_reid_model

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.cfg"


def resolve(argv):
    return resolve_config(build_parser().parse_args(argv))


def test_fully_defaulted_config_is_valid():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.spgan_config(0).weights.lambda1 == 10.0
    assert cfg.reid_config(0).max_epochs == 50
    assert parse_config_text("") == cfg


def test_resolved_config_roundtrip():
    cfg = load_config(TOY)
    assert parse_config_text(dump_config(cfg)) == cfg


def test_unknown_key_is_fatal(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[spgan]\nlamda3 = 1\n")
    with pytest.raises(ConfigError, match="spgan.lamda3"):
        load_config(bad)
    assert main(["synth", "--config", str(bad), "--run-dir", str(tmp_path / "r")]) == 2


def test_unknown_section_and_bad_value(tmp_path):
    with pytest.raises(ConfigError, match="sgan"):
        parse_config_text("[sgan]\nepochs = 2\n")
    with pytest.raises(ConfigError, match="spgan.epochs"):
        parse_config_text("[spgan]\nepochs = five\n")
    with pytest.raises(ConfigError, match="compare.variants"):
        parse_config_text("[compare]\nvariants = direct, spgam\n")


def test_missing_config_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert main(["compare", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize(
    "flag,value,attr,file_value",
    [
        ("--seed", "7", ("run", "seed"), "3"),
        ("--run-dir", "elsewhere", ("run", "run_dir"), "somewhere"),
    ],
)
def test_common_flag_precedence(tmp_path, flag, value, attr, file_value):
    section, key = attr
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text(f"[{section}]\n{key} = {file_value}\n")
    default = getattr(getattr(RunConfig(), section), key)
    from_file = getattr(getattr(resolve(["synth", "--config", str(cfg_file)]), section), key)
    from_flag = getattr(getattr(resolve(["synth", "--config", str(cfg_file), flag, value]), section), key)
    assert str(from_file) == file_value != str(default)
    assert str(from_flag) == value


def test_eval_flags_beat_file(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("[eval]\nparts = 3\nmode = avg\n")
    assert RunConfig().eval.parts == 1
    from_file = resolve(["eval", "--config", str(cfg_file)])
    assert (from_file.eval.parts, from_file.eval.mode) == (3, "avg")
    cfg = resolve(["eval", "--config", str(cfg_file), "--parts", "7", "--mode", "max"])
    assert (cfg.eval.parts, cfg.eval.mode) == (7, "max")
    only_mode = resolve(["eval", "--config", str(cfg_file), "--mode", "max"])
    assert (only_mode.eval.parts, only_mode.eval.mode) == (3, "max")


def test_compare_and_reid_flags_beat_file(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("[compare]\nreport_format = csv\n[reid]\ntrain_on = source\n")
    assert resolve(["compare", "--config", str(cfg_file)]).compare.report_format == "csv"
    assert resolve(["compare", "--config", str(cfg_file), "--format", "text"]).compare.report_format == "text"
    assert resolve(["train-reid", "--config", str(cfg_file)]).reid.train_on == "source"
    assert resolve(["train-reid", "--config", str(cfg_file), "--train-on", "target"]).reid.train_on == "target"


def test_stage_seeds_are_named_substreams():
    assert stage_seed(0, "spgan") == stage_seed(0, "spgan")
    assert stage_seed(0, "spgan") != stage_seed(0, "reid")
    assert stage_seed(0, "spgan") != stage_seed(1, "spgan")
    cfg = RunConfig()
    assert cfg.spgan_config(4).seed == stage_seed(4, "spgan")
    assert cfg.reid_config(4).seed == stage_seed(4, "reid")


def test_resolved_config_written_before_failure(tmp_path):
    run = tmp_path / "run"
    assert main(["eval", "--config", str(TOY), "--run-dir", str(run)]) == 1
    resolved = load_config(run / "resolved_config.cfg")
    assert resolved.run.run_dir == str(run)
    assert resolved.spgan.generator_filters == 4


def test_stage_commands_end_to_end(tmp_path):
    run = str(tmp_path / "run")
    common = ["--config", str(TOY), "--run-dir", run]
    assert main(["synth", *common]) == 0
    assert main(["train-spgan", *common]) == 0
    assert main(["translate", *common]) == 0
    assert main(["train-reid", *common]) == 0
    assert main(["eval", *common, "--parts", "2", "--mode", "max"]) == 0
    assert (Path(run) / "eval" / "results_P2_max.json").exists()
    assert main(["eval", *common, "--parts", "9"]) == 1  # taller than the 4-row toy feature map
    # the translated set keeps source filenames and labels
    src = load_manifest(Path(run) / "data" / "source" / "train")
    tr = load_manifest(Path(run) / "translated")
    assert [p.name for p in src.paths] == [p.name for p in tr.paths]
    assert src.identities.tolist() == tr.identities.tolist()


def test_report_row_counting():
    report = ComparisonReport()
    for variant in ("direct", "spgan"):
        for seed in ("0", "1", "2"):
            report.rows.append(ResultRow(variant, seed, 1, "avg", 0.5, 0.6, 0.7, 0.8, 0.4, 10))
            report.cmc[(variant, seed, 1, "avg")] = __import__("numpy").linspace(0.5, 1, 20)
    report.add_means()
    assert len(report.per_seed()) == 6
    assert len(report.rows) == 8
    assert report.mean_row("spgan").rank1 == pytest.approx(0.5)


@pytest.fixture(scope="module")
def toy_compare(tmp_path_factory):
    run = tmp_path_factory.mktemp("cmp") / "run"
    code = main(["compare", "--config", str(TOY), "--run-dir", str(run)])
    return code, run


def test_toy_compare_report(toy_compare):
    code, run = toy_compare
    assert code == 0
    with open(run / "report" / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    # 5 variants x 1 seed x 2 LMP settings, plus one mean row per (variant, setting)
    assert len(rows) == 20
    labels = {r["method"] for r in rows}
    assert "CycleGAN (basel.) + L_ide" in labels and "Direct Transfer" in labels
    ide_rows = [r for r in rows if r["variant"] == "cyclegan_ide"]
    assert all(r["method"] == "CycleGAN (basel.) + L_ide" for r in ide_rows)
    assert (run / "report" / "results.txt").read_text().startswith("Method")
    assert (run / "report" / "cmc_P1_avg.png").stat().st_size > 0
    assert (run / "resolved_config.cfg").exists()


def test_supervised_row_is_plain_target_training(toy_compare, tmp_path):
    _, run = toy_compare
    cfg = load_config(run / "resolved_config.cfg")
    target = load_manifest(run / "data" / "target" / "train", "csv_index", "target")
    net = train_reid_model(target, cfg.reid_config(0), tmp_path / "sup")
    q = extract_features(net, load_manifest(run / "data" / "target" / "query"), 1, "avg")
    g = extract_features(net, load_manifest(run / "data" / "target" / "gallery"), 1, "avg")
    res = evaluate_tables(q, g)
    with open(run / "report" / "results.csv") as fh:
        row = next(r for r in csv.DictReader(fh) if r["variant"] == "supervised" and r["seed"] == "0" and r["lmp"] == "P=1 avg")
    assert float(row["rank-1"]) == pytest.approx(res.rank_k[1], abs=5e-5)
    assert float(row["mAP"]) == pytest.approx(res.mAP, abs=5e-5)


def test_missing_upstream_checkpoint_names_variant(tmp_path, caplog):
    cfg_text = TOY.read_text().replace("[compare]\n", "[compare]\ntrain_missing = false\nvariants = direct, spgan\n")
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text(cfg_text)
    code = main(["compare", "--config", str(cfg_file), "--run-dir", str(tmp_path / "run")])
    assert code == 1
    assert "'spgan'" in caplog.text and "missing upstream checkpoint" in caplog.text


def test_rerun_from_resolved_config_is_bit_identical(toy_compare, tmp_path):
    _, run = toy_compare
    rerun = tmp_path / "rerun"
    assert main(["compare", "--config", str(run / "resolved_config.cfg"), "--run-dir", str(rerun)]) == 0
    skip = {"resolved_config.cfg", "run.log"}
    files = sorted(p.relative_to(run) for p in run.rglob("*") if p.is_file() and p.name not in skip)
    assert files == sorted(p.relative_to(rerun) for p in rerun.rglob("*") if p.is_file() and p.name not in skip)
    for rel in files:
        assert (run / rel).read_bytes() == (rerun / rel).read_bytes(), rel


def test_resume_reuses_translator_checkpoints(toy_compare):
    code, run = toy_compare
    ckpt = run / "seed_0" / "spgan" / "checkpoints" / "final" / "G.npz"
    before = ckpt.stat().st_mtime_ns
    assert main(["compare", "--config", str(run / "resolved_config.cfg")]) == 0
    assert ckpt.stat().st_mtime_ns == before


def test_stale_translator_checkpoint_rejected(toy_compare, tmp_path, caplog):
    _, run = toy_compare
    cfg = load_config(run / "resolved_config.cfg")
    changed = dataclasses.replace(cfg, spgan=dataclasses.replace(cfg.spgan, lambda1=3.0))
    path = tmp_path / "changed.cfg"
    path.write_text(dump_config(changed))
    assert main(["compare", "--config", str(path)]) == 1
    assert "different configuration" in caplog.text
