"""Command-line front end.

Subcommands: certify a network over a region, sweep a list of radii,
print per-neuron bounds at a layer, re-verify a stored certificate, and
generate random test networks.  stdout stays human-readable; --out
always writes machine JSON.  Exit codes: 0 success, 1 input error,
2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import certify as certify_mod
from .certify import CertRequest, Certificate, InputRegion, StageRecord, certify, sweep_radius
from .network import (
    ActivationSpec,
    LayerSelection,
    Network,
    NetworkFormatError,
    load,
    save,
)
from .oracles import jacobian_lower_bound, verify_certificate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_VERIFY = 2


class CliError(Exception):
    """Input problem that maps to exit code 1."""


def _parse_radius(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise CliError(f"radius must be a number or 'inf', got '{text}'")
    if value < 0 or math.isnan(value):
        raise CliError("radius must be nonnegative")
    return value


def _parse_center(text: str | None, dim: int) -> np.ndarray:
    if text is None:
        return np.zeros(dim)
    path = Path(text)
    if path.exists():
        raw = path.read_text().replace(",", " ").split()
        values = [float(x) for x in raw]
    else:
        values = [float(x) for x in text.split(",")]
    center = np.asarray(values, dtype=float)
    if center.shape != (dim,):
        raise CliError(f"center has {center.size} entries, network expects {dim}")
    return center


def _parse_index_list(text: str | None) -> tuple | None:
    # Flags use the 1-based convention; internals are 0-based.
    if text is None:
        return None
    try:
        idx = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise CliError(f"bad index list '{text}'")
    if any(i < 1 for i in idx):
        raise CliError("indices are 1-based")
    return tuple(i - 1 for i in idx)


def _parse_selection(args, net: Network) -> LayerSelection | None:
    inputs = _parse_index_list(getattr(args, "inputs", None))
    outputs = _parse_index_list(getattr(args, "outputs", None))
    layers = getattr(args, "layers", None)
    if layers is None:
        if inputs is None and outputs is None:
            return None
        p, i = 0, net.depth
    else:
        try:
            p_txt, i_txt = layers.split(":")
            p, i = int(p_txt), int(i_txt)
        except ValueError:
            raise CliError(f"--layers expects 'p:i', got '{layers}'")
    return LayerSelection(p, i, inputs, outputs)


def _load_network(path: str) -> Network:
    try:
        return load(path)
    except FileNotFoundError:
        raise CliError(f"network file not found: {path}")
    except NetworkFormatError as exc:
        raise CliError(f"bad network file {path}: {exc}")


def cmd_certify(args) -> int:
    net = _load_network(args.network)
    radius = _parse_radius(args.radius)
    selection = _parse_selection(args, net)
    center = _parse_center(args.center, net.input_dim)
    req = CertRequest(InputRegion(center, radius), selection=selection,
                      schedule=args.variant, cap=args.cap)
    t0 = time.perf_counter()
    if selection is None:
        target_net, cert = net, certify(net, req)
    else:
        target_net, sub_req = certify_mod.selection_subproblem(net, req)
        cert = certify(target_net, sub_req)
    elapsed = time.perf_counter() - t0
    code = EXIT_OK
    if args.verify:
        report = verify_certificate(target_net, cert, n_samples=args.samples,
                                    seed=args.seed)
        cert.verification = report.to_json_dict()
        if not report.ok:
            for f in report.failures:
                print(f"verification failure: {f}", file=sys.stderr)
            code = EXIT_VERIFY
    print(f"bound          {cert.bound:.12g}")
    print(f"trivial bound  {cert.trivial_bound:.12g}")
    print(f"wall time      {elapsed * 1e3:.3f} ms")
    if args.out:
        cert.save(args.out)
    return code


def cmd_sweep(args) -> int:
    net = _load_network(args.network)
    center = _parse_center(args.center, net.input_dim)
    try:
        radii = [float(tok) for tok in args.radii.split(",") if tok.strip()]
    except ValueError:
        raise CliError(f"bad radii list '{args.radii}'")
    if not radii:
        raise CliError("need at least one radius")
    certs = sweep_radius(net, center, radii, variant=args.variant, cap=args.cap)
    jac = jacobian_lower_bound(net, center)
    print(f"{'radius':>12}  {'bound':>16}  {'bound/jacobian':>16}")
    rows = []
    for r, cert in zip(radii, certs):
        ratio = cert.bound / jac if jac > 0 else math.inf
        print(f"{r:>12.6g}  {cert.bound:>16.9g}  {ratio:>16.9g}")
        rows.append({"radius": r, "certificate": cert.to_json_dict(),
                     "bound_over_jacobian": ratio})
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_neurons(args) -> int:
    net = _load_network(args.network)
    center = _parse_center(args.center, net.input_dim)
    radius = _parse_radius(args.radius)
    if not (1 <= args.layer <= net.depth):
        raise CliError(f"--layer must lie in 1..{net.depth}")
    bounds = certify_mod.neuron_bounds(net, InputRegion(center, radius), args.layer,
                                       variant=args.variant, cap=args.cap)
    for i, b in enumerate(bounds, start=1):
        print(f"neuron {i:>4}  {b:.12g}")
    if args.out:
        Path(args.out).write_text(json.dumps({"layer": args.layer,
                                              "bounds": bounds.tolist()}, indent=2) + "\n")
    return EXIT_OK


def _certificate_from_json(doc: dict) -> Certificate:
    region = doc["region"]
    radius = math.inf if region["radius"] == "inf" else float(region["radius"])
    records = []
    for rec in doc["per_layer"]:
        records.append(StageRecord(
            layer=int(rec["layer"]),
            skipped=bool(rec["skipped"]),
            method=rec["method"],
            lam=None if rec["lambda"] is None else np.asarray(rec["lambda"], dtype=float),
            c=rec["c"],
            margin=rec["margin"],
            alpha=np.asarray(rec["alpha"], dtype=float),
            beta=np.asarray(rec["beta"], dtype=float),
            range_lo=None if rec["range_lo"] is None else np.asarray(rec["range_lo"], dtype=float),
            range_hi=None if rec["range_hi"] is None else np.asarray(rec["range_hi"], dtype=float),
            fallback_log=list(rec.get("fallback_log", [])),
        ))
    return Certificate(
        bound=doc["bound"],
        trivial_bound=doc["trivial_bound"],
        variant_schedule=list(doc["variant_schedule"]),
        region_center=np.asarray(region["center"], dtype=float),
        region_radius=radius,
        per_layer=records,
        neuron_bounds=np.asarray(doc["neuron_bounds"], dtype=float),
        output_center=None if doc.get("output_center") is None
        else np.asarray(doc["output_center"], dtype=float),
        output_intervals=None if doc.get("output_intervals") is None
        else np.asarray(doc["output_intervals"], dtype=float),
        timings_ms=doc.get("timings_ms", {}),
    )


def cmd_verify(args) -> int:
    net = _load_network(args.network)
    try:
        doc = json.loads(Path(args.certificate).read_text())
        cert = _certificate_from_json(doc)
    except FileNotFoundError:
        raise CliError(f"certificate file not found: {args.certificate}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad certificate file: {exc}")
    report = verify_certificate(net, cert, n_samples=args.samples, seed=args.seed)
    if report.ok:
        print(f"certificate OK: bound {cert.bound:.12g}, "
              f"LMI min eig {report.lmi_min_eig:.3e}, "
              f"sampled lower bound {report.sampled_lower_bound:.6g}")
        return EXIT_OK
    for f in report.failures:
        print(f"verification failure: {f}", file=sys.stderr)
    return EXIT_VERIFY


def cmd_gen_random(args) -> int:
    if args.width < 1 or args.depth < 1 or args.input_dim < 1 or args.output_dim < 1:
        raise CliError("network dimensions must be positive")
    if not (0 < args.norm_lo <= args.norm_hi):
        raise CliError("weight-norm range must satisfy 0 < lo <= hi")
    param = args.param
    if param is None:
        param = {"leaky_relu": 0.01, "elu": 1.0}.get(args.activation, 0.0)
    act = ActivationSpec(args.activation, param)
    rng = np.random.default_rng(args.seed)
    dims = [args.input_dim] + [args.width] * (args.depth - 1) + [args.output_dim]
    ws, bs = [], []
    for rows, cols in zip(dims[1:], dims[:-1]):
        target = rng.uniform(args.norm_lo, args.norm_hi)
        G = rng.standard_normal((rows, cols))
        sigma = np.linalg.norm(G, ord=2)
        ws.append(G * (target / sigma))
        bs.append(args.bias_scale * rng.standard_normal(rows))
    net = Network(tuple(ws), tuple(bs), act)
    save(net, args.out)
    print(f"wrote {args.depth}-layer {args.activation} network to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipcert",
        description="Certified Lipschitz bounds for feedforward networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, radius=True):
        p.add_argument("--network", required=True, help="network JSON file")
        p.add_argument("--center", default=None,
                       help="region center: a file or comma-separated values "
                            "(default: origin)")
        if radius:
            p.add_argument("--radius", default="inf",
                           help="L2 radius of the input region, or 'inf' for "
                                "global bounds (default: inf)")
        p.add_argument("--variant", default="auto",
                       choices=["acc", "fast", "cf", "auto"])
        p.add_argument("--cap", type=float, default=1e6,
                       help="upper bound on multiplier entries (default 1e6)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="write machine JSON here")

    p = sub.add_parser("certify", help="certify one network over one region")
    common(p)
    p.add_argument("--layers", default=None, help="sub-network window 'p:i'")
    p.add_argument("--inputs", default=None, help="1-based input indices, comma list")
    p.add_argument("--outputs", default=None, help="1-based output indices, comma list")
    p.add_argument("--verify", action="store_true",
                   help="run the independent oracles and embed the report")
    p.add_argument("--samples", type=int, default=2000,
                   help="pair count for the sampled lower bound")
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("sweep", help="certify the same region center at several radii")
    common(p, radius=False)
    p.add_argument("--radii", required=True, help="comma list of radii")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("neurons", help="per-neuron bounds at one layer")
    common(p)
    p.add_argument("--layer", type=int, required=True, help="1-based layer index")
    p.set_defaults(fn=cmd_neurons)

    p = sub.add_parser("verify", help="re-check a stored certificate")
    p.add_argument("--network", required=True)
    p.add_argument("--certificate", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("gen-random", help="generate a random test network")
    p.add_argument("--depth", type=int, required=True, help="number of layers N")
    p.add_argument("--width", type=int, required=True, help="hidden width")
    p.add_argument("--activation", default="relu",
                   choices=["relu", "leaky_relu", "tanh", "sigmoid", "elu", "identity"])
    p.add_argument("--param", type=float, default=None,
                   help="activation parameter (defaults: leaky 0.01, elu 1.0)")
    p.add_argument("--input-dim", type=int, default=5)
    p.add_argument("--output-dim", type=int, default=2)
    p.add_argument("--norm-lo", type=float, default=0.8,
                   help="lower end of the per-layer spectral-norm range")
    p.add_argument("--norm-hi", type=float, default=2.5,
                   help="upper end of the per-layer spectral-norm range")
    p.add_argument("--bias-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_random)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
