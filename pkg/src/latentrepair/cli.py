"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from ._rng import stage_int
from .ci_tests import chi_square_test, g_test_conditional
from .dataset import (Dataset, RoleSpec, encode_columns, equal_frequency_bin, load_roles, project,
                      read_csv_columns, write_csv, write_roles)
from .errors import DataError
from .identify import IdentifyConfig, run_identification
from .latent_em import estimate
from .metrics import DEFAULT_ROD_SMOOTHING, cross_validate, evaluate
from .partition import PartitionConfig, partition_ic
from .pipeline import PipelineConfig, choose_partition, run_preprocess
from .stats import cond_mutual_info
from . import synthgen

log = logging.getLogger("latentrepair")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# defaults for every tunable; a --config file overrides these, explicit flags override both
DEFAULTS = {
    "alpha": 2,
    "significance": 0.05,
    "tau": 2,
    "epsilon": 1e-5,
    "n_iter": 800,
    "eta": 1e-3,
    "smoothing": 1e-6,
    "restarts": 1,
    "seed": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bin_spec(text: str) -> tuple[str, int]:
    name, sep, k = text.rpartition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected COL=K, got {text!r}")
    try:
        return name, int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bin count must be an integer in {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="worker threads for parallel stages")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--report", help="write a JSON run report here")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input CSV with a header row")
    p.add_argument("--roles", required=True, help="roles JSON file")
    p.add_argument("--bin", action="append", type=_bin_spec, default=[], metavar="COL=K",
                   help="equal-frequency bin a numeric column into K levels (repeatable)")


def _add_identify(p):
    p.add_argument("--alpha", type=int, default=None, help="max conditioning-set size (default 2)")
    p.add_argument("--significance", type=float, default=None, help="test level (default 0.05)")


def _add_partition(p):
    p.add_argument("--tau", type=int, default=None, help="latent states (default 2)")
    p.add_argument("--epsilon", type=float, default=None, help="hill-climb tolerance (default 1e-5)")
    p.add_argument("--strict-tau", action="store_true",
                   help="fail instead of lowering tau when I_c is too small")


def _add_estimate(p):
    p.add_argument("--n-iter", dest="n_iter", type=int, default=None, help="EM iteration cap (default 800)")
    p.add_argument("--eta", type=float, default=None, help="EM log-likelihood tolerance (default 1e-3)")
    p.add_argument("--smoothing", type=float, default=None, help="pseudo-count per CPT cell (default 1e-6)")
    p.add_argument("--restarts", type=int, default=None, help="EM restarts, best kept (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentrepair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", help="repair a dataset end to end")
    _add_data(p)
    _add_common(p)
    _add_identify(p)
    _add_partition(p)
    _add_estimate(p)
    p.add_argument("--output", required=True, help="repaired CSV")
    p.add_argument("--params-out", help="write fitted parameters (JSON)")
    p.add_argument("--keep-latent", action="store_true", help="keep the sampled latent column L")
    p.add_argument("--timings", action="store_true", help="include stage timings in the report")

    p = sub.add_parser("identify", help="print the label's inadmissible parents")
    _add_data(p)
    _add_common(p)
    _add_identify(p)

    p = sub.add_parser("partition", help="split I_c into two blocks")
    _add_data(p)
    _add_common(p)
    _add_identify(p)
    _add_partition(p)
    p.add_argument("--ic", type=_name_list, help="comma-separated I_c (default: run identify)")

    p = sub.add_parser("estimate", help="fit the latent model and write its parameters")
    _add_data(p)
    _add_common(p)
    _add_identify(p)
    _add_partition(p)
    _add_estimate(p)
    p.add_argument("--params-out", required=True, help="fitted parameters (JSON)")

    p = sub.add_parser("evaluate", help="AUC and ROD of a reference classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--test", help="test CSV (omit with --folds)")
    p.add_argument("--roles", required=True)
    p.add_argument("--folds", type=int, help="k-fold cross-validation on --train")
    p.add_argument("--latent-column", help="latent column in --train to check against S")
    p.add_argument("--rod-smoothing", type=float, default=DEFAULT_ROD_SMOOTHING)
    _add_common(p)

    p = sub.add_parser("synth", help="generate synthetic data from a random causal DAG")
    p.add_argument("--template", default="seven_node", choices=["seven_node", "adult", "random", "planted"])
    p.add_argument("--n-attrs", type=int, default=7, help="attribute count including the label")
    p.add_argument("--domain-size", type=int, default=4)
    p.add_argument("--edge-density", type=float, default=0.3)
    p.add_argument("--records", type=int, default=50_000)
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--roles-out", required=True, help="roles JSON path")
    p.add_argument("--spec-out", help="DAG spec JSON path")
    _add_common(p)

    p = sub.add_parser("indep-test", help="chi-square or conditional G-test between two columns")
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", type=_name_list, default=[], help="comma-separated conditioning set")
    p.add_argument("--significance", type=float, default=None)
    p.add_argument("--bin", action="append", type=_bin_spec, default=[], metavar="COL=K")
    _add_common(p)
    return parser


def _settings(args) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    out = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise DataError(f"{args.config}: unknown config key(s) {sorted(unknown)}")
        out.update(doc)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _load_csv(path: str, bins) -> Dataset:
    header, cols = read_csv_columns(path)
    for name, k in bins or []:
        if name not in header:
            raise DataError(f"--bin names unknown column {name!r}")
        j = header.index(name)
        cols[j] = equal_frequency_bin(cols[j], k)
    return encode_columns(header, cols)


def _load(args) -> tuple[Dataset, RoleSpec]:
    ds = _load_csv(args.input, args.bin)
    return ds, load_roles(args.roles).validate(ds)


def _dump_json(doc, path: str | None = None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _identify_cfg(s: dict) -> IdentifyConfig:
    return IdentifyConfig(alpha=int(s["alpha"]), significance=float(s["significance"]))


def _pipeline_cfg(s: dict, args) -> PipelineConfig:
    return PipelineConfig(identify=_identify_cfg(s), tau=int(s["tau"]), epsilon=float(s["epsilon"]),
                          n_iter=int(s["n_iter"]), eta=float(s["eta"]), smoothing=float(s["smoothing"]),
                          seed=int(s["seed"]), output_path=getattr(args, "output", None),
                          restarts=int(s["restarts"]), strict_tau=bool(getattr(args, "strict_tau", False)),
                          keep_latent=bool(getattr(args, "keep_latent", False)), workers=args.workers)


def cmd_preprocess(args) -> int:
    s = _settings(args)
    cfg = _pipeline_cfg(s, args)
    ds, roles = _load(args)
    res = run_preprocess(ds, roles, cfg)
    write_csv(res.data, args.output)
    if args.params_out:
        _dump_json(res.params.to_dict(), args.params_out)
    report = dict(res.report, command="preprocess", settings=s)
    if args.timings:
        report["timings"] = res.timings
    if args.report:
        _dump_json(report, args.report)
    return EXIT_OK


def cmd_identify(args) -> int:
    s = _settings(args)
    ds, roles = _load(args)
    res = run_identification(ds, roles, _identify_cfg(s), args.workers)
    _dump_json(res.ic)
    if args.report:
        _dump_json(dict(res.to_dict(), command="identify", settings=s), args.report)
    return EXIT_OK


def cmd_partition(args) -> int:
    s = _settings(args)
    ds, roles = _load(args)
    if args.ic is None:
        ic = run_identification(ds, roles, _identify_cfg(s), args.workers).ic
    else:
        unknown = [a for a in args.ic if a not in roles.inadmissible]
        if unknown:
            raise DataError(f"--ic lists non-inadmissible attribute(s) {unknown}")
        ic = ds.schema_order(args.ic)
    io = [a for a in roles.inadmissible if a not in ic]
    z = ds.schema_order(list(roles.sensitive) + io + list(roles.admissible))
    cfg = PartitionConfig(int(s["tau"]), float(s["epsilon"]), stage_int(int(s["seed"]), "partition"))
    part = partition_ic(ds, ic, z, cfg, args.workers)
    if args.strict_tau and part.tau != cfg.tau:
        raise DataError(part.warnings[0])
    doc = part.to_dict()
    _dump_json(doc)
    if args.report:
        _dump_json(dict(doc, command="partition", settings=s, trace=part.trace, warnings=part.warnings),
                   args.report)
    return EXIT_OK


def cmd_estimate(args) -> int:
    s = _settings(args)
    cfg = _pipeline_cfg(s, args)
    ds, roles = _load(args)
    ic = run_identification(ds, roles, cfg.identify, cfg.workers).ic
    part, tau, warnings = choose_partition(ds, roles, ic, cfg)
    params = estimate(ds, part, roles, tau, cfg.n_iter, cfg.eta, stage_int(cfg.seed, "estimate"),
                      cfg.smoothing, cfg.restarts)
    _dump_json(params.to_dict(), args.params_out)
    summary = {"tau": tau, "partition": part.to_dict(), "iterations_run": params.iterations_run,
               "final_loglik": params.final_loglik, "warnings": warnings}
    _dump_json(summary)
    if args.report:
        _dump_json(dict(summary, command="estimate", settings=s), args.report)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    s = _settings(args)
    roles = load_roles(args.roles)
    train = _load_csv(args.train, None)
    if args.folds:
        if args.test:
            raise UsageError("evaluate: --test and --folds are mutually exclusive")
        roles = roles.validate(train)
        rep = cross_validate(train, roles, args.folds, int(s["seed"]), args.rod_smoothing)
    else:
        if not args.test:
            raise UsageError("evaluate: need --test or --folds")
        test = _load_csv(args.test, None)
        latent = args.latent_column
        core = project(train, [a for a in train.names if a != latent]) if latent else train
        roles = roles.validate(core)
        roles.validate(test)
        rep = evaluate(train, test, roles, args.rod_smoothing, latent)
    doc = rep.to_dict()
    _dump_json(doc)
    if args.report:
        _dump_json(dict(doc, command="evaluate", settings=s), args.report)
    return EXIT_OK


def cmd_synth(args) -> int:
    s = _settings(args)
    seed = int(s["seed"])
    if args.template == "planted":
        spec, roles = synthgen.planted_bias_spec(stage_int(seed, "synth/spec"))
    else:
        spec, roles = synthgen.random_spec(args.n_attrs, args.domain_size, args.edge_density,
                                           args.template, stage_int(seed, "synth/spec"))
    ds = synthgen.generate(spec, args.records, stage_int(seed, "synth/records"))
    write_csv(ds, args.output)
    write_roles(roles, args.roles_out)
    if args.spec_out:
        synthgen.write_spec(spec, args.spec_out)
    if args.report:
        _dump_json({"command": "synth", "template": args.template, "n_records": ds.n_records,
                    "attributes": list(ds.names), "edges": [list(e) for e in spec.edges()],
                    "settings": s}, args.report)
    return EXIT_OK


def cmd_indep_test(args) -> int:
    s = _settings(args)
    ds = _load_csv(args.input, args.bin)
    for a in [args.x, args.y] + list(args.z):
        if a not in ds:
            raise DataError(f"unknown attribute {a!r}")
    sig = float(s["significance"])
    if args.z:
        res = g_test_conditional(ds, args.x, args.y, args.z, sig)
        kind = "g-test"
    else:
        res = chi_square_test(ds, args.x, args.y, sig)
        kind = "chi-square"
    doc = dict(res.to_dict(), test=kind, x=args.x, y=args.y, z=list(args.z),
               cmi_bits=cond_mutual_info(ds, args.x, args.y, args.z))
    _dump_json(doc)
    if args.report:
        _dump_json(dict(doc, command="indep-test", settings=s), args.report)
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "identify": cmd_identify,
    "partition": cmd_partition,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "indep-test": cmd_indep_test,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("latentrepair: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"latentrepair {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.debug("internal error", exc_info=True)
        print(f"latentrepair {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
