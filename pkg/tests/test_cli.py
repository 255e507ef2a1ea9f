import csv
import json

import pytest

from svpcf.cli import main


def write_log(path, n_users=12, per_user=6, n_items=15):
    rows = ["user,item,rating,timestamp"]
    for u in range(n_users):
        for k in range(per_user):
            rows.append(f"u{u},i{(u * 3 + k * 2) % n_items},{1 + (u + k) % 5},{u * 100 + k}")
    path.write_text("\n".join(rows) + "\n")
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sample_ten_rows_to_five(tmp_path):
    train = tmp_path / "train.csv"
    train.write_text("user,item,rating,timestamp\n" +
                     "".join(f"u{k},i{k % 3},1,{k}\n" for k in range(10)))
    out = tmp_path / "s.csv"
    assert main(["sample", "--train", train, "--strategy", "random-interaction",
                 "--percent", "50", "--seed", "7", "--out", out]) == 0
    assert len(read_rows(out)) == 5
    prov = json.loads(out.with_suffix(".provenance.json").read_text())
    assert prov["seeds"] == {"sampler": 7} and prov["result"]["budget"] == 5
    assert prov["inputs"][0]["sha256"] and prov["argv"][0] == "sample"


def test_bad_flag_exits_nonzero_without_artifacts(tmp_path, capsys):
    train = write_log(tmp_path / "t.csv")
    out = tmp_path / "o" / "s.csv"
    with pytest.raises(SystemExit) as e:
        main(["sample", "--train", train, "--strategy", "random-interaction",
              "--percent", "50", "--bogus", "--out", out])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["sample", "--train", train, "--strategy", "random-interaction",
              "--percent", "250", "--out", out])
    assert e.value.code != 0
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    assert not (tmp_path / "o").exists()


def test_downstream_error_is_module_qualified(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("user,item,rating,timestamp\na,x,oops,1\n")
    assert main(["sample", "--train", bad, "--strategy", "temporal", "--percent", "50",
                 "--out", tmp_path / "s.csv"]) == 1
    err = capsys.readouterr().err
    assert "svpcf sample: data.ParseError" in err and "line 2" in err


def test_psi_identity_config(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('percents = [100]\nstrategies = ["random-user", "svp-cf-bias-only-interaction"]\n'
                   '[train]\nepochs = 2\n[svp]\nepochs = 2\n'
                   '[[datasets]]\nname = "syn"\n'
                   '[datasets.synthetic]\nusers = 50\nitems = 25\ninteractions = 500\n')
    assert main(["psi", "--config", cfg, "--out", tmp_path / "run"]) == 0
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert report["psi_mean"] == {"random-user": 1.0, "svp-cf-bias-only-interaction": 1.0}
    assert (tmp_path / "run" / "provenance.json").exists()
    # `report` rebuilds the same CSV tables
    assert main(["report", tmp_path / "run" / "report.json", "--out", tmp_path / "again"]) == 0
    for name in ("psi.csv", "tau_vs_percent.csv", "p_mle.csv"):
        assert (tmp_path / "run" / name).read_text() == (tmp_path / "again" / name).read_text()


def test_pipeline_ingest_svp_train_evaluate(tmp_path):
    log = write_log(tmp_path / "log.csv")
    split = tmp_path / "split"
    assert main(["ingest", log, "--out", split, "--scenario", "implicit", "--seed", "1"]) == 0
    assert (split / "train.csv").exists() and (split / "provenance.json").exists()
    svp = tmp_path / "svp"
    assert main(["svp", "--split", split, "--proxy", "mf", "--granularity", "user",
                 "--prop", "on", "--epochs", "2", "--percent", "50", "--out", svp]) == 0
    table = read_rows(svp / "importance.csv")
    assert table and {"importance", "propensity"} <= set(table[0])
    n_train = len(read_rows(split / "train.csv"))
    assert len(read_rows(svp / "sample.csv")) == max(1, round(n_train / 2 + 1e-9))
    model = tmp_path / "m.json"
    assert main(["train", "--split", split, "--train-csv", svp / "sample.csv", "--model", "mf",
                 "--epochs", "2", "--out", model]) == 0
    metrics = tmp_path / "metrics.json"
    assert main(["evaluate", "--split", split, "--model", model, "--out", metrics]) == 0
    names = {m["name"] for m in json.loads(metrics.read_text())["metrics"]}
    assert names == {"AUC", "Recall", "nDCG"}
    pop = tmp_path / "pop.json"
    assert main(["train", "--split", split, "--model", "poprec", "--out", pop]) == 0
    assert main(["evaluate", "--split", split, "--model", pop, "--out", metrics]) == 0


def test_identical_argv_gives_identical_artifacts(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"d{k}.csv"
        assert main(["synth", "--users", "30", "--items", "20", "--interactions", "200",
                     "--seed", "4", "--out", out]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
