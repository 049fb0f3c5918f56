"""Command line front end over the certificate producers.

Each subcommand runs one construction at a chosen theory, dimension and
seed, prints a report, and encodes its verdict in the exit status:

    0   the command ran and every check it performed came out as designed
    1   the command ran but a check failed
    2   the invocation was unusable: bad flags, a missing or malformed
        script, or a theory/dimension combination the model cannot serve

Reports print as canonical JSON (sorted keys, fixed layout), so running
the same argv with the same seed yields byte-identical output. With
--format md the same content renders as markdown. The environment
variable PURELAB_LOG selects stderr diagnostics: error (default), info,
or debug.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from purelab.axioms import battery_doc, battery_markdown, run_battery
from purelab.choi import (
    check_causal_order,
    comb_decompose,
    faithful_pair,
    link,
    retrieve,
    store,
)
from purelab.circuits import evaluate
from purelab.dsl import DslError, parse_circuit, resolve
from purelab.error_correction import (
    code_spec,
    is_correctable,
    real_quantum_counterexample,
)
from purelab.metrology import discriminate, state_distance, transformation_norm
from purelab.protocols import deterministic_teleport, entanglement_swap, pauli_twirl
from purelab.purification import connect_dilations, stinespring
from purelab.serialize import canonical_json, encode
from purelab.theories import (
    CLASSICAL,
    LinearMap,
    QUANTUM,
    REAL_QUANTUM,
    StateVec,
    UnsupportedOperation,
    get_model,
)

LOG = logging.getLogger("purelab.cli")

THEORY_CHOICES = (CLASSICAL, QUANTUM, REAL_QUANTUM, "all")

EXAMPLES = {
    "axioms": "purelab axioms --theory all --dim 2 --expect golden.json",
    "eval": "purelab eval scripts/swap.opc --theory quantum",
    "norm": "purelab norm --theory quantum --dim 2 --seed 3",
    "discriminate": "purelab discriminate --theory classical --dim 4 --seed 1",
    "choi": "purelab choi --theory quantum --dim 2 --seed 0",
    "teleport": "purelab teleport --theory quantum --dim 3",
    "twirl": "purelab twirl --theory real-quantum --dim 2",
    "ec": "purelab ec --theory quantum",
    "comb": "purelab comb --theory quantum --dim 2 --seed 5",
    "dilate": "purelab dilate --theory quantum --dim 3 --seed 2",
}

HELP = {
    "axioms": "run the structural check battery and report verdicts",
    "eval": "evaluate every run of a circuit script",
    "norm": "lower-bound the operational norm of a map difference",
    "discriminate": "optimally tell two seeded states apart",
    "choi": "store, retrieve and link seeded channels through the pair",
    "teleport": "certify probabilistic and deterministic teleportation",
    "twirl": "average over displacements and check the collapse",
    "ec": "error correction certificates for stock noise models",
    "comb": "test a two-step circuit for causal order and split it",
    "dilate": "dilate a seeded channel and connect two dilations",
}


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    raw = os.environ.get("PURELAB_LOG", "error").strip().lower()
    logging.basicConfig(level=levels.get(raw, logging.ERROR),
                        stream=sys.stderr,
                        format="purelab %(levelname)s: %(message)s")


def _dims(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected N or N,M, got {text!r}") from None
    if not parts or any(d < 1 for d in parts) or len(parts) > 2:
        raise argparse.ArgumentTypeError(
            f"expected one or two positive dimensions, got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="purelab",
        description="certificates for operational theories at desk scale",
        epilog="examples:\n" + "\n".join(
            f"  {EXAMPLES[name]}" for name in sorted(EXAMPLES)),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name in ("axioms", "eval", "norm", "discriminate", "choi",
                 "teleport", "twirl", "ec", "comb", "dilate"):
        p = sub.add_parser(
            name, help=HELP[name], description=HELP[name],
            epilog="example:\n  " + EXAMPLES[name],
            formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--theory", choices=THEORY_CHOICES,
                       default="all" if name == "axioms" else QUANTUM,
                       help="which model to run (default %(default)s)")
        p.add_argument("--dim", type=_dims, default=None, metavar="N[,M]",
                       help="system dimension, or two joined by a comma")
        p.add_argument("--seed", type=int, default=0,
                       help="root seed for every random draw (default 0)")
        p.add_argument("--tol", type=float, default=None, metavar="X",
                       help="tolerance for the command's checks")
        p.add_argument("--format", choices=("json", "md"), default="json",
                       dest="fmt", help="report format (default json)")
        p.add_argument("--out", default=None, metavar="PATH",
                       help="write the report here instead of stdout")
        if name == "axioms":
            p.add_argument("--expect", default=None, metavar="PATH",
                           help="golden verdict file; exit 0 only on match")
        if name == "eval":
            p.add_argument("script", help="path to a circuit script")
    return top


def _emit(args, doc: dict, md: str = None) -> None:
    if args.fmt == "json":
        text = canonical_json(doc)
    elif md is not None:
        text = md
    else:
        text = "".join(f"{line}\n" for line in _md_lines(doc))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _md_lines(doc, indent=""):
    lines = []
    for key in sorted(doc):
        value = doc[key]
        if isinstance(value, dict):
            lines.append(f"{indent}- {key}:")
            lines.extend(_md_lines(value, indent + "  "))
        elif isinstance(value, (list, tuple)):
            flat = ", ".join(str(v) for v in value)
            lines.append(f"{indent}- {key}: [{flat}]")
        else:
            lines.append(f"{indent}- {key}: {value}")
    return lines


def _one_dim(args, default: int = 2) -> int:
    return args.dim[0] if args.dim else default


def _tol(args, default: float) -> float:
    return args.tol if args.tol is not None else default


# ---------------------------------------------------------------------------
# subcommands


def _cmd_axioms(args) -> int:
    theories = ((QUANTUM, CLASSICAL, REAL_QUANTUM)
                if args.theory == "all" else (args.theory,))
    dims = args.dim if args.dim else (2,)
    if len(dims) == 1:
        dims = (dims[0], dims[0])
    reports = run_battery(theories, dims=dims, seed=args.seed)
    doc = {"command": "axioms", "theory": args.theory}
    doc.update(battery_doc(reports, seed=args.seed))
    verdicts = {r.theory: {c.check: c.verdict for c in r.results}
                for r in reports}
    if args.expect:
        with open(args.expect, "r", encoding="utf-8") as fh:
            golden = json.load(fh)
        mismatches = []
        for theory, row in verdicts.items():
            want = golden.get(theory)
            if want is None:
                mismatches.append([theory, "*", "absent from golden file"])
                continue
            for check, verdict in row.items():
                if want.get(check) != verdict:
                    mismatches.append([theory, check,
                                       f"{verdict} != {want.get(check)}"])
        doc["golden_match"] = not mismatches
        doc["mismatches"] = mismatches
        code = 0 if not mismatches else 1
    else:
        failing = [[r.theory, c.check, c.verdict]
                   for r in reports for c in r.results
                   if c.verdict != "holds"]
        doc["failing"] = failing
        code = 0 if not failing else 1
    LOG.info("axioms: %d theories at dims %s, exit %d",
             len(reports), dims, code)
    _emit(args, doc, battery_markdown(reports))
    return code


def _cmd_eval(args) -> int:
    with open(args.script, "r", encoding="utf-8") as fh:
        text = fh.read()
    script = parse_circuit(text)
    model = get_model(args.theory)
    dims = args.dim[0] if args.dim else None
    base = os.path.dirname(os.path.abspath(args.script))
    resolved = resolve(script, model, dims=dims, base_dir=base)
    runs = {}
    for name in sorted(resolved.circuits):
        out = evaluate(resolved.circuits[name])
        if isinstance(out, float):
            runs[name] = {"kind": "scalar", "value": out}
        else:
            runs[name] = encode(out)
    LOG.info("eval: %d runs from %s", len(runs), args.script)
    _emit(args, {"command": "eval", "theory": args.theory,
                 "script": os.path.basename(args.script), "runs": runs})
    return 0


def _cmd_norm(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    system = model.system(d)
    rng = np.random.default_rng(args.seed)
    if args.theory == CLASSICAL:
        m1 = model.random_channel(system, system, rng)
        m2 = model.random_channel(system, system, rng)
    else:
        m1 = model.random_reversible(system, rng)
        m2 = model.random_reversible(system, rng)
    delta = LinearMap(system, system, m1.matrix - m2.matrix)
    result = transformation_norm(model, delta, budget=50, seed=args.seed)
    LOG.info("norm: lower bound %.6f after %d starts",
             result.lower_bound, result.restarts)
    _emit(args, {"command": "norm", "theory": args.theory, "dim": d,
                 "seed": args.seed, "budget": 50,
                 "lower_bound": float(result.lower_bound),
                 "restarts": int(result.restarts),
                 "ancilla_dims": [int(x) for x in result.ancilla.dims]})
    return 0


def _cmd_discriminate(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    system = model.system(d)
    rng = np.random.default_rng(args.seed)
    spanning = model.spanning_states(system)

    def mixed() -> StateVec:
        weights = rng.dirichlet(np.ones(len(spanning)))
        coords = sum(w * s.coords for w, s in zip(weights, spanning))
        return StateVec(system, coords)

    rho0, rho1 = mixed(), mixed()
    result = discriminate(model, rho0, rho1)
    dist = state_distance(model, rho0, rho1)
    # optimal discrimination at even priors sits exactly at
    # (1 + distance / 2) / 2; the gap checks the two routes agree
    gap = abs(result.p_success - 0.5 - dist / 4.0)
    tol = _tol(args, 1e-9)
    LOG.info("discriminate: p %.6f against distance %.6f",
             result.p_success, dist)
    _emit(args, {"command": "discriminate", "theory": args.theory, "dim": d,
                 "seed": args.seed, "p_success": float(result.p_success),
                 "distance": float(dist), "route_gap": float(gap),
                 "tolerance": tol})
    return 0 if gap <= tol else 1


def _cmd_choi(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    system = model.system(d)
    fp = faithful_pair(model, system)
    rng = np.random.default_rng(args.seed)
    first = model.random_channel(system, system, rng)
    second = model.random_channel(system, system, rng)
    stored = store(model, first, fp)
    back = retrieve(model, stored)
    round_trip = float(np.max(np.abs(back.matrix - first.matrix)))
    linked = link(model, stored.state, store(model, second, fp).state, fp)
    direct = store(model, second @ first, fp)
    link_gap = float(np.max(np.abs(linked.coords - direct.state.coords)))
    tol = _tol(args, 1e-8)
    checks = {"round_trip": round_trip <= tol, "link": link_gap <= tol,
              "identity": fp.identity_residual <= tol}
    LOG.info("choi: round trip %.3e, link %.3e", round_trip, link_gap)
    _emit(args, {"command": "choi", "theory": args.theory, "dim": d,
                 "seed": args.seed, "probability": float(fp.probability),
                 "identity_residual": float(fp.identity_residual),
                 "marginal_gap": float(stored.marginal_gap),
                 "round_trip_residual": round_trip,
                 "link_residual": link_gap, "tolerance": tol,
                 "checks": checks})
    return 0 if all(checks.values()) else 1


def _cmd_teleport(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    system = model.system(d)
    fp = faithful_pair(model, system)
    swap = entanglement_swap(model, fp.state, fp)
    run = deterministic_teleport(model, d)
    coord_dim = system.coord_dim
    bound_gap = 1.0 / coord_dim - swap.probability
    tol = _tol(args, 1e-8)
    checks = {
        "swap": swap.residual <= tol,
        "bound": bound_gap >= -1e-9,
        "branches": max(run.residuals) <= tol,
        "invariant": run.invariant_residual <= tol,
        "twirl": run.twirl_residual <= tol,
    }
    LOG.info("teleport: p %.6f over %d outcomes", swap.probability,
             len(run.probabilities))
    _emit(args, {"command": "teleport", "theory": args.theory, "dim": d,
                 "probability": float(swap.probability),
                 "coordinate_dimension": int(coord_dim),
                 "bound_gap": float(bound_gap),
                 "outcomes": len(run.probabilities),
                 "probabilities": [float(p) for p in run.probabilities],
                 "branch_residual": float(max(run.residuals)),
                 "invariant_residual": float(run.invariant_residual),
                 "twirl_residual": float(run.twirl_residual),
                 "effect_ranks": [int(r) for r in run.effect_ranks],
                 "tolerance": tol, "checks": checks})
    return 0 if all(checks.values()) else 1


def _cmd_twirl(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    tw = pauli_twirl(model, d)
    tol = _tol(args, 1e-9)
    LOG.info("twirl: %d branches, residual %.3e", len(tw.maps), tw.residual)
    _emit(args, {"command": "twirl", "theory": args.theory, "dim": d,
                 "branches": len(tw.maps),
                 "probabilities": [float(p) for p in tw.probabilities],
                 "residual": float(tw.residual), "tolerance": tol})
    return 0 if tw.residual <= tol else 1


def _pauli():
    return (np.eye(2, dtype=complex),
            np.array([[0, 1], [1, 0]], dtype=complex),
            np.array([[0, -1j], [1j, 0]], dtype=complex),
            np.diag([1.0 + 0j, -1.0]))


def _bitflip_spec(model):
    system = model.system(2, 2, 2)
    proj = np.zeros((8, 8))
    proj[0, 0] = proj[7, 7] = 1.0
    state = StateVec(system, model.to_coords(system, proj / 2))
    eye2 = np.eye(2)
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    flips = (np.kron(np.kron(eye2, eye2), eye2),
             np.kron(np.kron(x, eye2), eye2),
             np.kron(np.kron(eye2, x), eye2),
             np.kron(np.kron(eye2, eye2), x))
    probs = (0.85, 0.06, 0.05, 0.04)
    kraus = tuple(np.sqrt(p) * f for p, f in zip(probs, flips))
    noise = model.map_from_kraus(system, system, kraus, tag="channel")
    return code_spec(model, state, noise)


def _depolarizing_spec(model):
    system = model.system(2)
    noise = model.map_from_kraus(
        system, system, tuple(m / 2 for m in _pauli()), tag="channel")
    return code_spec(model, model.invariant_state(system), noise)


def _correction_doc(report) -> dict:
    doc = {"correctable": bool(report.correctable),
           "block_residual": float(report.block_residual),
           "split_residual": float(report.split_residual)}
    if report.correctable:
        doc["recovery_residual"] = float(report.recovery_residual)
    if report.witness is not None:
        doc["witness"] = [int(report.witness[0]), int(report.witness[1])]
    return doc


def _cmd_ec(args) -> int:
    if args.theory == CLASSICAL:
        raise UnsupportedOperation(
            "error correction certificates need a matrix model")
    model = get_model(args.theory)
    tol = _tol(args, 1e-8)
    if args.theory == QUANTUM:
        keep = is_correctable(_bitflip_spec(model), tol=tol)
        lose = is_correctable(_depolarizing_spec(model), tol=tol)
        code = 0 if keep.correctable and not lose.correctable else 1
        LOG.info("ec: bit flip %s, depolarizing %s",
                 keep.correctable, lose.correctable)
        _emit(args, {"command": "ec", "theory": args.theory,
                     "tolerance": tol,
                     "bit_flip": _correction_doc(keep),
                     "depolarizing": _correction_doc(lose)})
        return code
    report = real_quantum_counterexample()
    code = 0 if report.verdict == "converse-fails" else 1
    LOG.info("ec: real-model verdict %s", report.verdict)
    _emit(args, {"command": "ec", "theory": args.theory, "dim": 2,
                 "verdict": report.verdict,
                 "isometry_residual": float(report.isometry_residual),
                 "channel_deletes": float(report.deletion_direct.residual),
                 "complement_deletes":
                     float(report.deletion_complement.residual),
                 "fixed_point_gap": float(report.fixed_point_gap),
                 "block_residual":
                     float(report.correction.block_residual),
                 "witness": [int(report.correction.witness[0]),
                             int(report.correction.witness[1])]})
    return code


def _cmd_comb(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    sys_a = model.system(d)
    env = model.system(d)
    rng = np.random.default_rng(args.seed)
    v1 = model.random_channel(sys_a, model.compose(sys_a, env), rng)
    v2 = model.random_channel(model.compose(env, sys_a), sys_a, rng)
    comb = (model.lift_local(v2, sys_a, where="right")
            @ model.lift_local(v1, sys_a, where="left"))
    order = check_causal_order(model, comb)
    split = comb_decompose(model, comb)
    swap = model.permute_map(model.system(d, d), (1, 0))
    swap_order = check_causal_order(model, swap)
    tol = _tol(args, 1e-8)
    checks = {"ordered": bool(order.ordered),
              "rebuild": split.residual <= tol,
              "swap_rejected": not swap_order.ordered}
    LOG.info("comb: ordered %s, rebuild %.3e", order.ordered, split.residual)
    _emit(args, {"command": "comb", "theory": args.theory, "dim": d,
                 "seed": args.seed, "ordered": bool(order.ordered),
                 "order_residual": float(order.residual),
                 "steps": len(split.steps),
                 "memory_dims": [list(m.dims) for m in split.memories],
                 "rebuild_residual": float(split.residual),
                 "swap_ordered": bool(swap_order.ordered),
                 "swap_residual": float(swap_order.residual),
                 "tolerance": tol, "checks": checks})
    return 0 if all(checks.values()) else 1


def _cmd_dilate(args) -> int:
    model = get_model(args.theory)
    d = _one_dim(args)
    system = model.system(d)
    rng = np.random.default_rng(args.seed)
    channel = model.random_channel(system, system, rng)
    first = stinespring(model, channel)
    kraus = first.kraus
    # remix the family by a seeded rotation: same channel, second
    # equal-size dilation
    rot = model.random_reversible(model.system(len(kraus)), rng).kraus[0]
    remixed = tuple(sum(rot[i, k] * kraus[i] for i in range(len(kraus)))
                    for k in range(len(kraus)))
    other = model.map_from_kraus(system, system, remixed, tag="channel")
    second = stinespring(model, other, minimal=False)
    bridge = connect_dilations(first, second, tol=_tol(args, 1e-8))
    tol = _tol(args, 1e-8)
    checks = {"isometry": first.isometry_residual() <= tol,
              "reduction": first.reduction_residual() <= tol,
              "connector": bridge.residual <= tol,
              "unitary_connector": bridge.unitary is not None}
    LOG.info("dilate: env %d, connector residual %.3e",
             len(kraus), bridge.residual)
    _emit(args, {"command": "dilate", "theory": args.theory, "dim": d,
                 "seed": args.seed, "environment_dim": len(kraus),
                 "isometry_residual": float(first.isometry_residual()),
                 "reduction_residual": float(first.reduction_residual()),
                 "connector_residual": float(bridge.residual),
                 "unitary_connector": bridge.unitary is not None,
                 "tolerance": tol, "checks": checks})
    return 0 if all(checks.values()) else 1


_HANDLERS = {
    "axioms": _cmd_axioms,
    "eval": _cmd_eval,
    "norm": _cmd_norm,
    "discriminate": _cmd_discriminate,
    "choi": _cmd_choi,
    "teleport": _cmd_teleport,
    "twirl": _cmd_twirl,
    "ec": _cmd_ec,
    "comb": _cmd_comb,
    "dilate": _cmd_dilate,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        # argparse handles --help (0) and usage errors (2) itself
        return int(stop.code or 0)
    if args.theory == "all" and args.command != "axioms":
        print(f"purelab {args.command}: --theory all only applies to axioms",
              file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except UnsupportedOperation as exc:
        print(f"purelab {args.command}: unsupported: {exc}", file=sys.stderr)
        return 2
    except DslError as exc:
        print(f"purelab {args.command}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        missing = exc.filename if exc.filename else exc
        print(f"purelab {args.command}: no such file: {missing}",
              file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"purelab {args.command}: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"purelab {args.command}: check failed: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
