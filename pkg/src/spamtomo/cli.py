"""Command-line front end: ``spamtomo {simulate,detect,tomo,gauge-check}``.

Exit codes: 0 consistent / success, 2 correlated (or not gauge-equivalent),
3 inconclusive, 1 usage or input error.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from spamtomo import __version__, gauge, noise_models, partial_det, spam_data, tomography

log = logging.getLogger("spamtomo")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CORRELATED = 2
EXIT_INCONCLUSIVE = 3
VERDICT_EXIT = {"consistent": EXIT_OK, "correlated": EXIT_CORRELATED, "inconclusive": EXIT_INCONCLUSIVE}


class CliError(Exception):
    pass


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _state_rows(arr, name):
    P = np.asarray(arr, dtype=float)
    if P.ndim != 2 or P.shape[1] not in (3, 4):
        raise CliError(f"{name} must be an M x 3 (Bloch vectors) or M x 4 array")
    if P.shape[1] == 3:
        P = gauge.state_matrix(P)
    return P


def _detector_cols(arr, name):
    W = np.asarray(arr, dtype=float)
    if W.ndim != 2 or W.shape[0] != 4:
        raise CliError(f"{name} must be a 4 x N array (rows w_x, w_y, w_z, u)")
    return W


def model_mean_S(cfg):
    """Mean data matrix described by a model configuration dict."""
    if "P_o" in cfg or "W_o" in cfg:
        P = _state_rows(cfg["P_o"], "P_o")
        W = _detector_cols(cfg["W_o"], "W_o")
    else:
        P, W = noise_models.reference_model()
    kind = cfg.get("kind", "gaussian")
    chi = float(cfg.get("chi", 0.0))
    if kind == "gaussian":
        if "X" in cfg:
            model = noise_models.GaussianCorrelationModel(P, W, np.asarray(cfg["X"], dtype=float), cfg.get("sigma"))
        else:
            model = noise_models.GaussianCorrelationModel.isotropic(P, W, chi, cfg.get("sigma"))
        data = noise_models.gaussian_mean_S(model)
    elif kind == "causal":
        data = noise_models.causal_mean_S(noise_models.CausalModel(P, W, chi))
    elif kind == "uncorrelated":
        data = spam_data.build_S(P, W)
    else:
        raise CliError(f"unknown model kind {kind!r}")
    return spam_data.DataMatrix(data.S, None, cfg.get("rows"), cfg.get("cols"))


def _resolve(value, cfg, key, default):
    if value is not None:
        return value
    return cfg.get(key, default)


def cmd_simulate(args):
    cfg = load_json(args.model) if args.model else {}
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    shots = int(_resolve(args.shots, cfg, "shots", 100_000))
    try:
        mean = model_mean_S(cfg)
    except (ValueError, KeyError) as exc:
        raise CliError(f"invalid model: {exc}") from exc
    counts = spam_data.simulate_counts(mean, shots, seed)
    text = spam_data.counts_to_csv(counts)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    log.info("simulated %d x %d cells, %d shots each, seed %d", *counts.shape, shots, seed)
    return EXIT_OK


def read_counts(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return spam_data.read_counts_csv(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except spam_data.CountsFormatError as exc:
        raise CliError(f"{path}: {exc}") from exc


def build_report(data, summary, r, policy, seed, inputs):
    return {
        "verdict": summary.verdict,
        "statistic_max_abs_z": partial_det._json_float(summary.statistic),
        "threshold": partial_det._json_float(summary.threshold),
        "alpha": summary.alpha,
        "chi2": summary.chi2,
        "chi2_dof": summary.chi2_dof,
        "chi2_pvalue": summary.chi2_pvalue,
        "block_size": r,
        "partition_policy": policy,
        "n_partitions": len(summary.results),
        "n_informative": len(summary.informative),
        "partitions": [res.to_dict(summary.threshold) for res in summary.results],
        "data": data.to_dict(),
        "provenance": {"inputs": inputs, "seed": seed, "version": __version__},
    }


def z_table(summary):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["partition", "a", "b", "nabla", "dnabla", "z", "informative"])
    for j, res in enumerate(summary.results):
        r = res.partition.r
        for a in range(r):
            for b in range(r):
                writer.writerow([
                    j, a, b,
                    repr(float(res.nabla[a, b])),
                    repr(float(res.dnabla[a, b])),
                    repr(float(res.zscores[a, b])),
                    int(res.informative),
                ])
    return buf.getvalue()


def cmd_detect(args):
    if not args.counts:
        raise CliError("detect needs --counts")
    seed = 0 if args.seed is None else int(args.seed)
    if not 0 < args.alpha < 1:
        raise CliError("--alpha must lie in (0, 1)")
    counts = read_counts(args.counts)
    try:
        data = spam_data.estimate(counts)
        summary = partial_det.detect_correlations(data, args.block_size, args.partitions, args.alpha, seed)
    except (ValueError, IndexError) as exc:
        raise CliError(str(exc)) from exc
    report = build_report(data, summary, args.block_size, args.partitions, seed, {"counts": sha256_file(args.counts)})
    text = dump_json(report)
    if args.out:
        write_atomic(args.out, text)
        stem, _ = os.path.splitext(args.out)
        write_atomic(stem + "_z.csv", z_table(summary))
    else:
        sys.stdout.write(text)
    log.info("verdict %s (max |z| = %.3f, threshold %.3f)", summary.verdict, summary.statistic, summary.threshold)
    return VERDICT_EXIT[summary.verdict]


def cmd_tomo(args):
    if not args.counts:
        raise CliError("tomo needs --counts")
    counts = read_counts(args.counts)
    try:
        data = spam_data.estimate(counts)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    inputs = {"counts": sha256_file(args.counts)}
    try:
        if args.fiducials:
            fid = load_json(args.fiducials)
            inputs["fiducials"] = sha256_file(args.fiducials)
            if "P" in fid:
                P = _state_rows(fid["P"], "P")
                W = tomography.detector_tomography(data, P)
                mode = "detector_tomography"
            elif "W" in fid:
                W = _detector_cols(fid["W"], "W")
                P = tomography.state_tomography(data, W)
                mode = "state_tomography"
            else:
                raise CliError("fiducial file needs a 'P' or 'W' entry")
            residual = float(np.max(np.abs(data.S - P @ W)))
            out = {"mode": mode, "P": P.tolist(), "W": W.tolist(), "residual": residual}
        else:
            fact = tomography.factorize(data, args.block_size)
            out = {"mode": "factorize", **fact.to_dict()}
            P, W = fact.P_hat, fact.W_hat
    except (tomography.FiducialRankError, tomography.GaugeNormalizationError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    if P.shape[1] == 4:
        out["physicality"] = tomography.physicality_report(P, W)
    out["provenance"] = {"inputs": inputs, "version": __version__}
    text = dump_json(out)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_params(path):
    obj = load_json(path)
    if "P" not in obj or "W" not in obj:
        raise CliError(f"{path} must contain 'P' and 'W'")
    return _state_rows(obj["P"], "P"), _detector_cols(obj["W"], "W")


def cmd_gauge_check(args):
    P1, W1 = _load_params(args.first)
    P2, W2 = _load_params(args.second)
    report = {"inputs": {"first": sha256_file(args.first), "second": sha256_file(args.second)}, "version": __version__}
    code = EXIT_OK
    try:
        G = gauge.find_gauge(P1, W1, P2, W2, tol=args.tol)
    except gauge.NotGaugeEquivalentError as exc:
        report.update({"equivalent": False, "reason": str(exc), "residual": partial_det._json_float(exc.residual)})
        code = EXIT_CORRELATED
    except (gauge.GaugeNotIdentifiableError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    else:
        parts = gauge.polar_decompose(G.H)
        report.update({
            "equivalent": True,
            "G": G.matrix.tolist(),
            "H": G.H.tolist(),
            "a": G.a.tolist(),
            "B": parts.B.tolist(),
            "B_eigenvalues": parts.blame_scales.tolist(),
            "R": parts.R.tolist(),
            "R_proper": parts.proper,
            "is_identity": G.allclose(gauge.GaugeTransform.identity(), atol=args.tol),
        })
    text = dump_json(report)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return code


def _policy(value):
    try:
        partial_det.parse_policy(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return value


def build_parser():
    ap = argparse.ArgumentParser(prog="spamtomo", description="Correlated SPAM error detection for qubits")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate binomial counts from a model file")
    sim.add_argument("--model", help="model JSON (defaults to the built-in uncorrelated reference model)")
    sim.add_argument("--shots", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="counts CSV path (stdout if omitted)")
    sim.set_defaults(func=cmd_simulate)

    det = sub.add_parser("detect", help="test counts for correlated SPAM errors")
    det.add_argument("--counts", required=True)
    det.add_argument("--block-size", type=int, choices=(3, 4), default=4)
    det.add_argument("--partitions", type=_policy, default="disjoint", help="disjoint | sliding | random:<k>")
    det.add_argument("--alpha", type=float, default=0.05)
    det.add_argument("--seed", type=int, help="seed for random partitions")
    det.add_argument("--out", help="report JSON path; <stem>_z.csv is written alongside")
    det.set_defaults(func=cmd_detect)

    tomo = sub.add_parser("tomo", help="state/detector tomography or factorization up to gauge")
    tomo.add_argument("--counts", required=True)
    tomo.add_argument("--fiducials", help="JSON with known 'P' (states) or 'W' (detectors)")
    tomo.add_argument("--block-size", type=int, choices=(3, 4), default=4, help="factorization rank without fiducials")
    tomo.add_argument("--out")
    tomo.set_defaults(func=cmd_tomo)

    gc = sub.add_parser("gauge-check", help="test whether two (P, W) sets are gauge-equivalent")
    gc.add_argument("first")
    gc.add_argument("second")
    gc.add_argument("--tol", type=float, default=1e-8)
    gc.add_argument("--out")
    gc.set_defaults(func=cmd_gauge_check)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"spamtomo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
