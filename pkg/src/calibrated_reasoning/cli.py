"""``calreason`` command line.

Every subcommand writes its outputs plus ``effective_config.json`` into
``--out-dir``. Failures print one JSON object on stderr and exit with 2 (bad
input), 3 (backend) or 4 (internal invariant).

A ``--config`` file holds ``key = value`` lines whose keys are flag names
without the leading dashes (``k-values = 1,10``); ``#`` starts a comment.
Flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import aid as aidmod
from . import curation, ensemble, merge, metrics, records, temperature
from .backends import HttpBackend, HttpConfig, OracleBackend
from .errors import CalibrationError, EmptyInput, InputError
from .extraction import extract_answer, extract_code, normalize_answer

log = logging.getLogger("calreason")


# -- argument helpers --------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bounds(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("bounds must be lo,hi")
    return vals[0], vals[1]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------------


def _load_problems(path) -> list[records.Problem]:
    if not Path(path).exists():
        raise InputError(f"problems file not found: {path}")
    problems = records.load_problems(path)
    if not problems:
        raise EmptyInput(f"no problems in {path}")
    return problems


def _backend_factory(args):
    if args.backend == "oracle":
        def make(t: int):
            name = "oracle" if t == 1 else f"oracle-iter{t - 1}"
            return OracleBackend(
                accuracy=args.accuracy,
                confidence_fidelity=args.fidelity,
                seed=args.seed + t - 1,
                common_error_rate=args.common_error_rate,
                model_name=name,
                max_in_flight=args.max_in_flight,
            )
        return make
    if not args.base_url or not args.model:
        raise InputError("--backend http needs --base-url and --model")
    cfg = HttpConfig(
        base_url=args.base_url,
        model_name=args.model,
        api_key_env_var=args.api_key_env or None,
        decode_temperature=args.decode_temperature,
        max_tokens=args.max_tokens,
        timeout_seconds=args.timeout,
        max_in_flight=args.max_in_flight,
        confidence_mode=args.confidence_mode,
    )
    backend = HttpBackend(cfg)
    return lambda t: backend


def cmd_curate(args) -> int:
    problems = _load_problems(args.problems)
    cfg = curation.CurationConfig(
        K=args.k,
        iterations=args.iterations,
        seed=args.seed,
        decode_temperature=args.decode_temperature,
        mode=args.mode,
        rationalize=args.rationalize,
        max_in_flight=args.max_in_flight,
    )
    checker = curation.VerdictFile(args.verdicts) if args.verdicts else None
    report = curation.run_curation(
        problems,
        _backend_factory(args),
        cfg,
        args.out_dir,
        resume=args.resume,
        checker=checker,
        created_at=args.created_at,
    )
    for c in report.iterations:
        print(
            f"iteration {c.iteration}: {c.n_samples} samples, {c.n_correct} correct, "
            f"{c.n_reason} reasoning / {c.n_eval_yes + c.n_eval_no} self-evaluation examples"
        )
    return 0


def _load_run_records(path) -> list[records.GenerationRecord]:
    if not Path(path).exists():
        raise InputError(f"run file not found: {path}")
    run = records.load_run(path)
    if not run.records:
        raise EmptyInput(f"run file {path} has no records")
    bad = [v for r in run.records for v in r.check()]
    if bad:
        raise InputError(f"run file {path} has invalid records: {bad[0]}")
    return [r.with_confidence() for r in run.records]


def cmd_evaluate(args) -> int:
    recs = _load_run_records(args.run)
    out = Path(args.out_dir)
    if args.ts:
        val, rest = temperature.split_validation(recs, args.val_size, args.seed)
        fit = temperature.fit_temperature(val, args.ts_bounds)
        report = metrics.full_report(metrics.Outcomes.from_records(rest), args.bins)
        scaled = temperature.apply_temperature(rest, fit.temperature)
        report.temperature = fit.to_json()
        report.ece_ts = metrics.ece(metrics.Outcomes.from_records(scaled), args.bins)
        report.extra["n_reported"] = len(rest)
        _write_json(out / "temperature.json", fit.to_json())
    else:
        report = metrics.full_report(metrics.Outcomes.from_records(recs), args.bins)
    _write_json(out / "report.json", report.to_json())
    metrics.write_reliability_csv(report.bins, out / "reliability.csv")
    auroc = "undefined" if report.auroc is None else f"{report.auroc:.4f}"
    line = f"n={report.n} accuracy={report.accuracy:.4f} ece={report.ece:.4f} brier={report.brier:.4f} auroc={auroc}"
    if report.ece_ts is not None:
        line += f" ece_ts={report.ece_ts:.4f} T={report.temperature['temperature']:.4f}"
    print(line)
    return 0


def cmd_ts_fit(args) -> int:
    recs = _load_run_records(args.run)
    val, _ = temperature.split_validation(recs, args.val_size, args.seed)
    fit = temperature.fit_temperature(val, args.ts_bounds)
    _write_json(Path(args.out_dir) / "temperature.json", fit.to_json())
    print(f"T={fit.temperature:.6f} nll {fit.nll_before:.6f} -> {fit.nll_after:.6f} (n={fit.n_validation})")
    return 0


def cmd_ensemble(args) -> int:
    recs = _load_run_records(args.run)
    problems = _load_problems(args.gold)
    gold = {p.id: normalize_answer(p.gold_answer) for p in problems}
    k_max = min(sum(1 for r in recs if r.problem_id == pid) for pid in {r.problem_id for r in recs})
    k_values = sorted(set(args.k_values)) if args.k_values else [k_max]
    if any(k < 1 or k > k_max for k in k_values):
        raise InputError(f"K values must lie in [1, {k_max}]")
    modes = {"sc": [ensemble.SC], "cisc": [ensemble.CISC], "both": [ensemble.SC, ensemble.CISC]}[args.mode]
    all_inputs = ensemble.inputs_from_records(recs)
    missing = [i.problem_id for i in all_inputs if i.problem_id not in gold]
    if missing:
        raise InputError(f"no gold answer for problem {missing[0]!r}")
    meta = {"mode": args.mode, "k_values": k_values}
    report_ids = [i.problem_id for i in all_inputs]
    t = args.softmax_t
    if ensemble.CISC in modes and t is None:
        # tune on a held-out subset of problems, report on the rest
        val, rest = temperature.split_validation(report_ids, args.val_size, args.seed)
        tune_on = [i for i in ensemble.inputs_from_records(recs, max(k_values)) if i.problem_id in set(val)]
        t = ensemble.tune_cisc_temperature(tune_on, gold)
        report_ids = rest
        meta.update({"softmax_t_source": "tuned", "n_tuning_problems": len(val), "tuning_grid": list(ensemble.CISC_T_GRID)})
    elif t is not None:
        meta["softmax_t_source"] = "flag"
    keep = set(report_ids)
    runs = {k: [i for i in ensemble.inputs_from_records(recs, k) if i.problem_id in keep] for k in k_values}
    cells = ensemble.scaling_sweep(runs, gold, modes, 1.0 if t is None else t, args.bins)
    meta["softmax_t"] = t
    meta["n_reported_problems"] = len(keep)
    out = Path(args.out_dir)
    ensemble.write_ensemble_csv(cells, out / "ensemble.csv")
    ensemble.write_sweep_csv(cells, out / "sweep.csv")
    _write_json(out / "ensemble_metadata.json", meta)
    for c in cells:
        print(f"K={c.k} {c.mode}: accuracy={c.accuracy:.4f} ece={c.report.ece:.4f}")
    return 0


def _load_tmap(path):
    if not Path(path).exists():
        raise InputError(f"tensor file not found: {path}")
    return merge.load_tmap(path)


def cmd_merge(args) -> int:
    base = _load_tmap(args.base)
    tuned = _load_tmap(args.tuned)
    out = Path(args.out_dir)
    path = out / f"merged_lambda_{args.lam:.4f}.tmap"
    merge.save_tmap(merge.merge(base, tuned, args.lam), path)
    result = {"lambda": args.lam, "path": path.name}
    if args.check_endpoints:
        ok = all(
            a.tobytes() == b.tobytes()
            for lam, ref in ((0.0, base), (1.0, tuned))
            for name, a in merge.merge(base, tuned, lam).items()
            for b in [ref[name].astype("<f4")]
        )
        result["endpoints_bit_equal"] = ok
        print(f"endpoint check: {'pass' if ok else 'FAIL'}")
        if not ok:
            _write_json(out / "merge_result.json", result)
            return 4
    _write_json(out / "merge_result.json", result)
    print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    base = _load_tmap(args.base)
    tuned = _load_tmap(args.tuned)
    outputs = merge.sweep(base, tuned, args.grid, args.out_dir)
    for lam, path in outputs:
        print(f"lambda={lam:.4f} -> {path.name}")
    return 0


def cmd_pareto(args) -> int:
    rows = merge.read_scores_csv(args.table)
    if args.model:
        rows = [r for r in rows if r.model == args.model]
        if not rows:
            raise InputError(f"no rows for model {args.model!r}")
    result = merge.classify_by_model(rows, args.baseline)
    _write_json(Path(args.out_dir) / "pareto.json", result)
    for r in result:
        print(f"{r['model']}\t{r['method']}\t{r['zone']}")
    return 0


def _read_tokens(path) -> list[str]:
    text = sys.stdin.read() if path in (None, "-") else Path(path).read_text(encoding="utf-8")
    try:
        tokens = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"token stream must be a JSON list of strings: {exc}") from None
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise InputError("token stream must be a JSON list of strings")
    return tokens


def cmd_aid_trace(args) -> int:
    cfg = aidmod.AidConfig(
        max_len=args.max_len,
        soft_margin=args.soft_margin,
        max_box_content=args.max_box_content,
        eos_token=args.eos_token,
        stop_tokens=frozenset(args.stop_tokens.split(",")) if args.stop_tokens else frozenset(),
    )
    res = aidmod.run_to_completion(_read_tokens(args.tokens), cfg)
    trace = {
        "complete": res.complete,
        "n_forced": res.n_forced,
        "text": res.text(),
        "actions": [{"kind": a.kind, "token": a.token} for a in res.actions],
        "final_state": res.final_state._asdict(),
    }
    _write_json(Path(args.out_dir) / "aid_trace.json", trace)
    print(json.dumps({k: trace[k] for k in ("complete", "n_forced", "text")}, ensure_ascii=False))
    return 0


def cmd_extract(args) -> int:
    text = sys.stdin.read() if args.input in (None, "-") else Path(args.input).read_text(encoding="utf-8")
    res = extract_code(text, args.signature or "") if args.code else extract_answer(text)
    print(json.dumps(res.to_json(), ensure_ascii=False))
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="key = value file; flags override it")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--created-at", default=None, help="timestamp written into run metadata")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="calreason", description="Calibrated reasoning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curate", parents=[common], help="sample, label and export training data")
    c.add_argument("--problems", required=True)
    c.add_argument("--k", type=int, default=1)
    c.add_argument("--iterations", type=int, default=1)
    c.add_argument("--backend", choices=("oracle", "http"), default="oracle")
    c.add_argument("--mode", choices=(curation.DUAL, curation.STAR), default=curation.DUAL)
    c.add_argument("--rationalize", action="store_true")
    c.add_argument("--resume", action="store_true")
    c.add_argument("--verdicts", default=None, help="JSONL verdicts for code problems")
    c.add_argument("--decode-temperature", type=float, default=0.7)
    c.add_argument("--max-in-flight", type=int, default=1)
    c.add_argument("--accuracy", type=float, default=0.5)
    c.add_argument("--fidelity", type=float, default=1.0)
    c.add_argument("--common-error-rate", type=float, default=0.3)
    c.add_argument("--base-url", default=None)
    c.add_argument("--model", default=None)
    c.add_argument("--api-key-env", default="OPENAI_API_KEY")
    c.add_argument("--max-tokens", type=int, default=1024)
    c.add_argument("--timeout", type=float, default=60.0)
    c.add_argument("--confidence-mode", choices=("next_token", "scored"), default="next_token")
    c.set_defaults(func=cmd_curate)

    def ts_flags(sp):
        sp.add_argument("--val-size", type=int, default=500)
        sp.add_argument("--ts-bounds", type=_bounds, default=temperature.DEFAULT_BOUNDS)

    e = sub.add_parser("evaluate", parents=[common], help="calibration report for a run file")
    e.add_argument("--run", required=True)
    e.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    e.add_argument("--ts", action="store_true", help="fit T on a validation split, report on the rest")
    ts_flags(e)
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("ts-fit", parents=[common], help="fit a temperature on a validation split")
    t.add_argument("--run", required=True)
    ts_flags(t)
    t.set_defaults(func=cmd_ts_fit)

    en = sub.add_parser("ensemble", parents=[common], help="SC / CISC sweep over K")
    en.add_argument("--run", required=True)
    en.add_argument("--gold", required=True, help="problems JSONL with gold answers")
    en.add_argument("--k-values", type=_ints, default=None)
    en.add_argument("--mode", choices=("sc", "cisc", "both"), default="both")
    en.add_argument("--softmax-t", type=float, default=None)
    en.add_argument("--val-size", type=int, default=500)
    en.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    en.set_defaults(func=cmd_ensemble)

    m = sub.add_parser("merge", parents=[common], help="interpolate two tensor maps")
    m.add_argument("--base", required=True)
    m.add_argument("--tuned", required=True)
    m.add_argument("--lambda", dest="lam", type=float, required=True)
    m.add_argument("--check-endpoints", action="store_true")
    m.set_defaults(func=cmd_merge)

    s = sub.add_parser("sweep", parents=[common], help="merge over a lambda grid")
    s.add_argument("--base", required=True)
    s.add_argument("--tuned", required=True)
    s.add_argument("--grid", type=_floats, default=list(merge.DEFAULT_GRID))
    s.set_defaults(func=cmd_sweep)

    pa = sub.add_parser("pareto", parents=[common], help="accuracy/ECE zones against a baseline")
    pa.add_argument("--table", default=None, help="results CSV; defaults to the bundled MATH table")
    pa.add_argument("--model", default=None)
    pa.add_argument("--baseline", default="Base Model")
    pa.set_defaults(func=cmd_pareto)

    a = sub.add_parser("aid-trace", parents=[common], help="run a token stream through the decoder constraint")
    a.add_argument("--tokens", default=None, help="JSON list of tokens; stdin if omitted")
    a.add_argument("--max-len", type=int, default=1024)
    a.add_argument("--soft-margin", type=int, default=150)
    a.add_argument("--max-box-content", type=int, default=40)
    a.add_argument("--eos-token", default="<eos>")
    a.add_argument("--stop-tokens", default="")
    a.set_defaults(func=cmd_aid_trace)

    x = sub.add_parser("extract", parents=[common], help="extract the final answer from text")
    x.add_argument("--input", default=None, help="text file; stdin if omitted")
    x.add_argument("--code", action="store_true")
    x.add_argument("--signature", default=None)
    x.set_defaults(func=cmd_extract)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub.choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    sp = sub.choices[command]
    by_dest = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in values.items():
        action = by_dest.get({"lambda": "lam"}.get(key, key))
        if action is None or key in ("config", "help"):
            raise InputError(f"unknown config key {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            value = _bool(raw)
        elif action.type is not None:
            try:
                value = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise InputError(f"config key {key!r}: {exc}") from None
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise InputError(f"config key {key!r}: {raw!r} is not one of {list(action.choices)}")
        defaults[action.dest] = value
        # a required flag may now come from the file
        action.required = False
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    except CalibrationError as exc:
        return _fail(exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        effective = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
        _write_json(out / "effective_config.json", effective)
        return args.func(args)
    except CalibrationError as exc:
        return _fail(exc)
    except (ValueError, OSError) as exc:
        return _fail(InputError(str(exc)))
    except Exception as exc:  # noqa: BLE001 - last-resort structured report
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 4


def _fail(exc: CalibrationError) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), **exc.details()}
    print(json.dumps(err, default=str), file=sys.stderr)
    return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
