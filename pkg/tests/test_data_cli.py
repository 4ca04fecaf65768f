import pytest

from seqrules.cli import main
from seqrules.data import DatasetFormatError, SynthConfig, dump_dataset, load_dataset, read_groups, synthesize
from seqrules.dsl import read_rules


def test_dataset_round_trip():
    records, _ = synthesize(SynthConfig(n_records=50, seed=1))
    text = dump_dataset(records, 48)
    back, C, max_t = load_dataset(text)
    assert C == 48 and max_t == max(len(r) for r in records)
    assert back == records


def test_empty_visits_and_records():
    text = "#VOCAB 3 #MAXT 2\n- 0,2\n\n"
    recs, C, _ = load_dataset(text)
    assert recs[0].codes() == [[], [0, 2]]
    assert len(recs[1]) == 0
    assert load_dataset(dump_dataset(recs, 3))[0] == recs


@pytest.mark.parametrize("text", [
    "",
    "#VOCAB x #MAXT 2\n",
    "#VOCAB 3 #MAXT 1\n0 1\n",
    "#VOCAB 3 #MAXT 2\n3\n",
    "#VOCAB 3 #MAXT 2\n1,0\n",
    "#VOCAB 3 #MAXT 2\na\n",
])
def test_dataset_format_errors(text):
    with pytest.raises(DatasetFormatError):
        load_dataset(text)


def test_read_groups_forms():
    assert read_groups("GROUPS 0,1 2,3,4\nPLANTED x\n") == [[0, 1], [2, 3, 4]]
    assert read_groups("0,1 5") == [[0, 1], [5]]


def test_synth_rejects_tiny_vocab():
    with pytest.raises(ValueError):
        synthesize(SynthConfig(vocab_size=10))


def test_cli_end_to_end(tmp_path, capsys):
    d = tmp_path
    assert main(["synth", "--out", str(d / "train.txt"), "--meta-out", str(d / "meta.txt"), "--n", "600", "--seed", "2"]) == 0
    assert main(["mine", str(d / "train.txt"), "--meta", str(d / "meta.txt"), "--out", str(d / "rules.txt")]) == 0
    rules = read_rules(d / "rules.txt")
    assert len(rules) > 0
    assert main(["validate", str(d / "rules.txt")]) == 0
    assert main(["fit", str(d / "train.txt"), "--out", str(d / "m.npz"), "--rules", str(d / "rules.txt"), "--epochs", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("nll_constrained") == 2
    assert main(["generate", "--model", str(d / "m.npz"), "--rules", str(d / "rules.txt"), "--n", "200",
                 "--out", str(d / "gen.txt"), "--max-steps", "20"]) == 0
    assert main(["check", str(d / "gen.txt"), str(d / "rules.txt"), "--out", str(d / "rep.txt")]) == 0
    rep = (d / "rep.txt").read_text()
    assert "static_violations 0" in rep and "temporal_violations 0" in rep and "pct_valid 100.0000" in rep
    assert main(["check", str(d / "gen.txt"), str(d / "rules.txt"), "--mode", "step", "--out", str(d / "rep2.txt")]) == 0
    assert (d / "rep2.txt").read_text() == rep
    assert main(["generate", "--model", str(d / "m.npz"), "--n", "200", "--out", str(d / "free.txt"), "--max-steps", "20"]) == 0
    assert main(["check", str(d / "free.txt"), str(d / "rules.txt"), "--out", str(d / "rep3.txt")]) == 1
    assert main(["dump", str(d / "rules.txt"), "--out", str(d / "dump.txt")]) == 0
    assert (d / "dump.txt").read_text().startswith("# program:")
    assert main(["bench", "--model", str(d / "m.npz"), "--rules", str(d / "rules.txt"), "--n", "5",
                 "--repeats", "2", "--out", str(d / "bench.txt")]) == 0
    assert "ratio" in (d / "bench.txt").read_text()


def test_cli_generate_is_thread_independent(tmp_path):
    d = tmp_path
    main(["synth", "--out", str(d / "t.txt"), "--n", "200", "--seed", "4"])
    main(["fit", str(d / "t.txt"), "--out", str(d / "m.npz")])
    main(["generate", "--model", str(d / "m.npz"), "--n", "30", "--out", str(d / "a.txt"), "--threads", "1"])
    main(["generate", "--model", str(d / "m.npz"), "--n", "30", "--out", str(d / "b.txt"), "--threads", "2"])
    assert (d / "a.txt").read_text() == (d / "b.txt").read_text()


def test_cli_convert_and_validate_errors(tmp_path, capsys):
    cnf = tmp_path / "f.cnf"
    cnf.write_text("VOCAB 4\nVAR a cur 0\nVAR b cur 1\nCLAUSE -a +b\n")
    out = tmp_path / "r.txt"
    assert main(["convert", str(cnf), str(out)]) == 0
    (r,) = read_rules(out).rules
    assert r.id == "c1" and r.output_code == 1 and r.alpha == 1.0
    bad = tmp_path / "bad.txt"
    bad.write_text("VOCAB 3\nRULE a WHEN cur[1] THEN 1 = 1\n")
    assert main(["validate", str(bad)]) == 1
    assert "reads its own output" in capsys.readouterr().out
    bad.write_text("VOCAB 3\nRULE oops\n")
    assert main(["validate", str(bad)]) == 1
