"""Command-line entry point: ``seqrules <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dsl
from .bench import bench_generation, scaling_sweep
from .data import SynthConfig, read_dataset, read_groups, synthesize, write_dataset
from .engine import GenerationConfig, check_violations_fast, generate_dataset
from .grouping import compile_program
from .miner import Thresholds, mine_all
from .oracle import check_violations
from .rules import RuleSet, validate_ruleset
from .toygen import FreqModel, train_constrained


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_program(path: str | None, vocab_size: int):
    if path is None:
        return None
    rules = dsl.read_rules(path)
    if rules.vocab_size != vocab_size:
        raise SystemExit(f"error: rules vocab {rules.vocab_size} != data/model vocab {vocab_size}")
    return compile_program(rules)


def cmd_validate(args) -> int:
    try:
        rules = dsl.read_rules(args.rules)
    except dsl.DslSyntaxError as e:
        print(f"syntax error: {e}", file=sys.stderr)
        return 1
    report = validate_ruleset(rules)
    if report.ok:
        print(f"ok: {len(rules)} rules, vocab {rules.vocab_size}")
        return 0
    print(str(report))
    return 1


def cmd_convert(args) -> int:
    expr = dsl.parse_cnf(Path(args.cnf).read_text())
    rules = RuleSet(tuple(dsl.cnf_to_cif(expr, args.prefix)), dsl.cnf_vocab_size(expr))
    _emit(dsl.serialize_rules(rules), args.out)
    return 0


def cmd_mine(args) -> int:
    records, C, _ = read_dataset(args.data)
    if args.meta:
        groups = read_groups(Path(args.meta).read_text())
    elif args.demo_groups:
        groups = read_groups(args.demo_groups)
    else:
        groups = []
    th = Thresholds(args.min_exclusive, args.min_demo, args.min_precedence, args.min_persist, args.min_persist_repeat)
    rules = mine_all(records, groups, th, vocab_size=C)
    _emit(dsl.serialize_rules(rules), args.out)
    print(f"mined {len(rules)} rules", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_records=args.n, vocab_size=args.vocab, min_visits=args.min_visits,
        max_visits=args.max_visits, planted=not args.unplanted, seed=args.seed,
    )
    records, meta = synthesize(cfg)
    write_dataset(records, args.out, cfg.vocab_size)
    if args.meta_out:
        Path(args.meta_out).write_text(meta.to_text())
    return 0


def cmd_fit(args) -> int:
    records, C, _ = read_dataset(args.data)
    if args.rules:
        program = _load_program(args.rules, C)
        model, trace = train_constrained(records, program, epochs=args.epochs, seed=args.seed, vocab_size=C)
        for e in trace:
            print(f"epoch {e.epoch} nll_constrained {e.constrained:.6f} nll_unconstrained {e.unconstrained:.6f}")
    else:
        model = FreqModel.fit(records, vocab_size=C)
    model.save(args.out)
    return 0


def cmd_generate(args) -> int:
    model = FreqModel.load(args.model)
    program = _load_program(args.rules, model.vocab_size)
    cfg = GenerationConfig(max_steps=args.max_steps, end_code=args.end_code, fixed_length=args.fixed_length, seed=args.seed)
    records = generate_dataset(model, program, args.n, cfg, threads=args.threads)
    write_dataset(records, args.out, model.vocab_size, max_t=args.max_steps)
    return 0


def cmd_check(args) -> int:
    records, C, _ = read_dataset(args.data)
    rules = dsl.read_rules(args.rules)
    if rules.vocab_size != C:
        raise SystemExit(f"error: rules vocab {rules.vocab_size} != data vocab {C}")
    if args.mode == "batch":
        report = check_violations_fast(records, compile_program(rules))
    else:
        report = check_violations(records, rules)
    _emit(report.to_text(), args.out)
    return 0 if report.total == 0 else 1


def cmd_bench(args) -> int:
    model = FreqModel.load(args.model)
    program = _load_program(args.rules, model.vocab_size)
    cfg = GenerationConfig(max_steps=args.max_steps, seed=args.seed)
    res = bench_generation(model, program, n_records=args.n, repeats=args.repeats, config=cfg)
    _emit(res.to_text(), args.out)
    return 0


def cmd_scaling(args) -> int:
    res = scaling_sweep(batch=args.batch, repeats=args.repeats, seed=args.seed)
    _emit(res.to_text(), args.out)
    return 0


def cmd_dump(args) -> int:
    _emit(compile_program(dsl.read_rules(args.rules)).describe(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqrules", description="Logical rule enforcement for sequential binary records.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="parse and validate a rule file")
    s.add_argument("rules")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("convert", help="convert a CNF file to rules")
    s.add_argument("cnf")
    s.add_argument("out", nargs="?")
    s.add_argument("--prefix", default="c", help="rule id prefix")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("mine", help="mine rules from a dataset")
    s.add_argument("data")
    s.add_argument("--out")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--meta", help="meta file written by 'synth' (GROUPS line)")
    g.add_argument("--demo-groups", help='demographic groups, e.g. "0,1 2,3,4"')
    s.add_argument("--min-exclusive", type=int, default=10)
    s.add_argument("--min-demo", type=int, default=500)
    s.add_argument("--min-precedence", type=int, default=10)
    s.add_argument("--min-persist", type=int, default=10)
    s.add_argument("--min-persist-repeat", type=int, default=5)
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--meta-out")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--vocab", type=int, default=48)
    s.add_argument("--min-visits", type=int, default=3)
    s.add_argument("--max-visits", type=int, default=12)
    s.add_argument("--unplanted", action="store_true", help="noise only, no planted patterns")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="fit the toy model (optionally with rule-adjusted training)")
    s.add_argument("data")
    s.add_argument("--out", required=True)
    s.add_argument("--rules")
    s.add_argument("--epochs", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("generate", help="generate records from a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--rules")
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--max-steps", type=int, default=100)
    s.add_argument("--end-code", type=int)
    s.add_argument("--fixed-length", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("check", help="count rule violations in a dataset")
    s.add_argument("data")
    s.add_argument("rules")
    s.add_argument("--mode", choices=("step", "batch"), default="batch",
                   help="step: per-step reference walk; batch: compiled matrix pass")
    s.add_argument("--out")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("bench", help="time constrained vs unconstrained generation")
    s.add_argument("--model", required=True)
    s.add_argument("--rules", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--repeats", type=int, default=25)
    s.add_argument("--max-steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("scaling", help="log-log slopes of batch-pass time vs T and |C|")
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_scaling)

    s = sub.add_parser("dump", help="print compiled groups (W, theta, alpha)")
    s.add_argument("rules")
    s.add_argument("--out")
    s.set_defaults(func=cmd_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
