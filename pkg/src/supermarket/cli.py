"""Command-line entry point.

Exit codes: 0 success, 1 validation or verdict failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import verify as V
from .decomposition import (
    InstanceTooLargeError,
    bonded_components,
    brute_force_decompose,
    decompose,
    decomposition_problems,
    save_report,
)
from .lp import LPError
from .model import (
    InstanceFormatError,
    InvalidInstanceError,
    format_rational,
    load_instance,
    parse_rational,
    validate,
)
from .simulator import JLW, QUEUE, WALK, SimConfig, run

EXPERIMENTS = ("speeds", "separation", "shape", "stability", "weights", "dispersion", "diffusion", "coupling")


class UsageError(Exception):
    pass


def _clusters_text(clusters) -> str:
    return ", ".join("{" + ",".join(str(j + 1) for j in sorted(c)) + "}" for c in clusters)


def _print_decomposition(d, out) -> None:
    for k, (c, v) in enumerate(zip(d.clusters, d.values), 1):
        print(f"C_{k}={_clusters_text([c])} V_{k}={format_rational(v)}", file=out)


def _rational_vector(text: str) -> list:
    try:
        return [parse_rational(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _int_vector(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"not an integer vector: {text!r}") from None


def cmd_validate(args, out) -> int:
    problems = validate(load_instance(args.input))
    for p in problems:
        print(p, file=out)
    if not problems:
        print("valid", file=out)
    return 1 if problems else 0


def cmd_decompose(args, out) -> int:
    inst = load_instance(args.input)
    d = brute_force_decompose(inst) if args.brute_force else decompose(inst)
    _print_decomposition(d, out)
    if args.output:
        save_report(d, args.output)
    problems = decomposition_problems(d)
    for p in problems:
        print(p, file=sys.stderr)
    return 1 if problems else 0


def cmd_synthesize(args, out) -> int:
    d = decompose(load_instance(args.input))
    for s, row in zip(d.instance.neighbourhoods, d.witness.to_lists()):
        print(_clusters_text([s]) + ": " + " ".join(row), file=out)
    if args.output:
        save_report(d, args.output)
    return 0


def cmd_bonded(args, out) -> int:
    inst = load_instance(args.input)
    d = decompose(inst)
    bonded = bonded_components(inst, d)
    for k, groups in enumerate(bonded, 1):
        print(f"C_{k}: {_clusters_text(groups)}", file=out)
    if args.output:
        save_report(d, args.output, bonded)
    return 0


def cmd_simulate(args, out) -> int:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        inst = load_instance(args.input) if args.input else None
        config = SimConfig.from_dict(data, inst)
    else:
        if not args.input:
            raise UsageError("simulate needs --input or --config")
        inst = load_instance(args.input)
        if args.policy == "witness":
            d = decompose(inst)
            inst, policy = d.instance, d.witness
        else:
            policy = JLW
        config = SimConfig(inst, args.kind, policy, _int_vector(args.initial), args.horizon or 10_000,
                           args.seed, args.cadence)
    traj = run(config)
    if args.output:
        traj.to_csv(args.output)
    print(" ".join(str(int(v)) for v in traj.final_state), file=out)
    return 0


def _verdicts(args):
    inst = load_instance(args.input)
    exp = args.experiment
    if exp == "weights":
        samples = [_rational_vector(w) for w in args.weights] or None
        if samples is None:
            raise UsageError("weights experiment needs --weights (repeatable)")
        return [V.check_weight_invariance(inst, samples)]
    if exp == "coupling":
        return [V.check_coupling(inst, args.horizon or 10**5, args.thin, args.thin, args.replicas or 20, args.seed)]
    if exp == "diffusion":
        stations = _int_vector(args.stations)
        if not stations:
            raise UsageError("diffusion needs --stations")
        return [V.check_unbonded_diffusion(inst, [j - 1 for j in stations], args.horizon or 10**6,
                                           args.replicas or 32, args.seed)]
    d = V.agreed_decomposition(inst)
    if exp == "speeds":
        return [V.check_speeds(inst, d, args.horizon or 10**6, args.epsilon, args.replicas or 8, args.seed,
                               args.required_fraction)]
    if exp == "separation":
        return [V.check_separation(inst, d, args.horizon or 10**5, args.replicas or 8, args.seed,
                                   _int_vector(args.initial))]
    if exp == "shape":
        return [V.check_shape_recurrence(inst, d, None, args.horizon or 10**6, args.radius,
                                         args.replicas or 4, args.seed)]
    if exp == "stability":
        return [V.check_stability(inst, d, args.horizon or 10**6, args.replicas or 4, args.seed)]
    if exp == "dispersion":
        return [V.check_dispersion(inst, d, None, args.horizon or 10**6, args.seed, _int_vector(args.initial))]
    raise UsageError(f"unknown experiment {exp!r}")


def cmd_verify(args, out) -> int:
    try:
        verdicts = _verdicts(args)
    except V.DecompositionMismatch as exc:
        print(f"decomposition mismatch: {exc}", file=sys.stderr)
        return 1
    except (V.InapplicableError, V.CriticalCaseError) as exc:
        raise UsageError(str(exc)) from None
    text = json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    for v in verdicts:
        print(v.line(), file=sys.stderr)
    return 0 if all(v.passed for v in verdicts) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supermarket", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_input=True):
        p.add_argument("--input", required=need_input, help="instance JSON file")
        p.add_argument("--output", help="where to write the report")
        return p

    common(sub.add_parser("validate", help="check instance invariants"))
    p = common(sub.add_parser("decompose", help="print clusters and exact values"))
    p.add_argument("--brute-force", action="store_true", help="use subset enumeration instead of LPs")
    common(sub.add_parser("synthesize", help="print a witness static policy"))
    common(sub.add_parser("bonded", help="print bonded sub-clusters"))

    p = common(sub.add_parser("simulate", help="simulate and export a trajectory CSV"), need_input=False)
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--kind", choices=(QUEUE, WALK), default=WALK)
    p.add_argument("--policy", choices=("jlw", "witness"), default="jlw")
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cadence", type=int)
    p.add_argument("--initial", help="comma-separated initial state")

    p = common(sub.add_parser("verify", help="run a simulation experiment"))
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--radius", type=float, default=10)
    p.add_argument("--weights", action="append", default=[], help="comma-separated weight vector (repeatable)")
    p.add_argument("--initial", help="comma-separated initial state")
    p.add_argument("--stations", help="comma-separated 1-based stations (diffusion)")
    p.add_argument("--thin", type=float, default=0.3, help="thinning probability (coupling)")
    p.add_argument("--required-fraction", type=float, default=1.0, help="replica pass fraction (speeds)")
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "decompose": cmd_decompose,
    "synthesize": cmd_synthesize,
    "bonded": cmd_bonded,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def run_cli(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, InstanceFormatError, InvalidInstanceError, InstanceTooLargeError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LPError as exc:
        print(f"internal LP error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
