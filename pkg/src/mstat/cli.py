"""Command line front end: cone queries, coderivative membership, certificate
verification, application pipelines, synthetic data and gradient self-checks.

Exit codes: 0 success or verification pass, 2 verification fail, 1 usage,
input or numeric error. All emitted JSON carries schema tag "mstat/1" and is
byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cones as C
from . import graph_normals as GN
from . import newsvendor as NV
from . import portfolio as PF
from . import stationarity as ST

SCHEMA = "mstat/1"


class CliError(Exception):
    """Usage or input error; maps to exit code 1."""


def _threads():
    raw = os.environ.get("MSTAT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError("MSTAT_THREADS must be an integer, got %r" % raw)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("no such file: %s" % path)
    except json.JSONDecodeError as exc:
        raise CliError("malformed JSON in %s: line %d column %d: %s"
                       % (path, exc.lineno, exc.colno, exc.msg))


def _dump(obj, args):
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(obj, fh, sort_keys=True, indent=2)
            fh.write("\n")
    if args.format == "json":
        print(json.dumps(obj, sort_keys=True, indent=2))
    return obj


def _feasible_from_spec(spec, dim):
    if spec == "orthant":
        return ST.FeasibleSet.orthant(dim)
    if spec == "simplex":
        return ST.FeasibleSet.simplex(dim)
    if isinstance(spec, dict):
        return ST.FeasibleSet.polyhedron(C.Polyhedron.from_dict(spec))
    raise CliError("unrecognized feasible set: %r" % (spec,))


# ---------------------------------------------------------------------------
# subcommands

def cmd_cones(args):
    q = _load_json(args.input)
    op = q.get("op")
    eps = q.get("eps", args.tol if args.tol is not None else C.DEFAULT_EPS)
    out = {"schema": SCHEMA, "op": op}
    if op in ("active-set", "tangent", "normal-multiplier", "critical", "face-difference"):
        z = np.asarray(q["z"], dtype=float)
        fs = _feasible_from_spec(q["Z"], len(z))
        poly = fs.as_polyhedron()
        if op == "active-set":
            out["active"] = list(C.active_set(poly, z, eps))
            out["near_threshold"] = list(C.active_diagnostics(poly, z, eps))
        elif op == "tangent":
            out["cone"] = C.tangent_cone(poly, z, eps).to_dict()
        elif op == "normal-multiplier":
            dec = C.normal_cone_multiplier(poly, z, np.asarray(q["v"], dtype=float), eps)
            if dec is None:
                out["member"] = False
            else:
                out.update({"member": True, "lambda": dec.lam.tolist(),
                            "I_plus": list(dec.I_plus), "I_zero": list(dec.I_zero)})
        elif op == "critical":
            out["cone"] = C.critical_cone(poly, z, np.asarray(q["v"], dtype=float), eps).to_dict()
        else:
            cone = C.face_difference(poly, z, np.asarray(q["v"], dtype=float),
                                     q.get("J1", []), q.get("J2", []), eps=eps)
            out["cone"] = cone.to_dict()
    elif op == "polar":
        out["cone"] = C.polar_cone(C.ConeRepH.from_dict(q["cone"])).to_dict()
    elif op == "faces":
        faces = C.faces_of_cone(C.ConeRepH.from_dict(q["cone"]), eps)
        out["faces"] = [{"J": list(f.J), **f.cone.to_dict()} for f in faces]
    elif op == "member-h":
        out["member"] = C.member_h(C.ConeRepH.from_dict(q["cone"]),
                                   np.asarray(q["d"], dtype=float), eps)
    elif op == "member-v":
        out["member"] = C.member_v(C.ConeRepV.from_dict(q["cone"]),
                                   np.asarray(q["w"], dtype=float), eps)
    else:
        raise CliError("unknown cones op: %r" % op)
    _dump(out, args)
    if args.format == "text":
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_gph_normal(args):
    q = _load_json(args.input)
    z = np.asarray(q["z"], dtype=float)
    g = np.asarray(q["g"], dtype=float)
    pair = GN.NormalPair(np.asarray(q["zeta"], dtype=float),
                         np.asarray(q["eta"], dtype=float))
    spec = q["Z"]
    method = args.method
    if method == "auto":
        method = "explicit" if spec in ("orthant", "simplex") else "direct"
    if method == "explicit":
        if spec == "orthant":
            res = GN.orthant_membership(z, g, pair)
        elif spec == "simplex":
            res = GN.simplex_membership(z, g, pair)
        else:
            raise CliError("explicit method needs Z = orthant or simplex")
        label = "explicit"
    else:
        poly = _feasible_from_spec(spec, len(z)).as_polyhedron()
        if method == "oracle":
            res = GN.oracle_membership(poly, GN.GraphPoint(z, g), pair)
        else:
            res = GN.polyhedron_membership(poly, GN.GraphPoint(z, g), pair)
        label = "oracle"
    out = {"schema": SCHEMA, "member": bool(res.member), "verdict": res.verdict,
           "method": label, "witness": _jsonable(res.witness)}
    _dump(out, args)
    if args.format == "text":
        print("member" if res.member else "not a member (%s)" % res.verdict)
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _portfolio_from_json(data):
    try:
        return PF.PortfolioInstance.from_dict(data)
    except (KeyError, ValueError) as exc:
        raise CliError("bad portfolio problem: %s" % exc)


def _newsvendor_from_json(data):
    try:
        return NV.NewsvendorInstance.from_dict(data)
    except (KeyError, ValueError) as exc:
        raise CliError("bad newsvendor problem: %s" % exc)


def _portfolio_certificate(data, instance):
    theta = np.asarray(data["theta"], dtype=float)
    if theta.size != instance.d_x * instance.d_z:
        raise CliError("theta has %d entries, expected %d"
                       % (theta.size, instance.d_x * instance.d_z))
    scen = []
    for i, s in enumerate(data.get("scenarios", [])):
        try:
            scen.append(ST.ScenarioCertificate(
                z=s["z"], eta=s["eta"], zeta=s.get("zeta"),
                lam=s.get("lambda"), J1=s.get("J1"), J2=s.get("J2"),
                mu=s.get("mu"), value_weights=s.get("value_weights")))
        except KeyError as exc:
            raise CliError("certificate scenario %d is missing %s" % (i, exc))
    return ST.Certificate(theta=theta.ravel(), scenarios=scen)


def cmd_verify(args):
    problem = _load_json(args.problem)
    cert_data = _load_json(args.certificate)
    tol = args.tol if args.tol is not None else ST.DEFAULT_TOL
    kind = problem.get("type")
    if kind == "spo_portfolio":
        inst = _portfolio_from_json(problem)
        cert = _portfolio_certificate(cert_data, inst)
        prob = PF.as_problem(inst)
        if args.mode == "penalized":
            def solver(model, theta, x):
                r_hat = np.asarray(theta, dtype=float).reshape(
                    inst.d_x, inst.d_z).T @ np.asarray(x, dtype=float)
                return [PF.solve_simplex_qp(r_hat, inst.sigma, inst.risk_aversion).z]
            report = ST.verify_certificate_penalized(prob, cert, tol=tol,
                                                     solver=solver, threads=_threads())
        else:
            report = ST.verify_certificate(prob, cert, tol=tol, threads=_threads())
    elif kind == "newsvendor_kernel":
        if args.mode == "penalized":
            raise CliError("penalized mode is not available for newsvendor problems")
        inst = _newsvendor_from_json(problem)
        theta = float(np.atleast_1d(np.asarray(cert_data["theta"], dtype=float))[0])
        report = NV.verify_newsvendor_system(theta, cert_data["scenarios"], inst, tol=tol)
    else:
        raise CliError("unknown problem type: %r" % kind)
    out = report.to_dict()
    _dump(out, args)
    if args.format == "text":
        print("verdict: %s (upper residual %.3g)"
              % ("PASS" if report.passed else "FAIL", report.upper_residual))
        for s in report.scenarios:
            print("  scenario %d: lower %.3g, member %s, residual %.3g"
                  % (s.index, s.lower_residual, s.m_membership, s.m_residual))
    return 0 if report.passed else 2


def cmd_spo_portfolio(args):
    problem = _load_json(args.problem)
    inst = _portfolio_from_json(problem)
    if args.samples_csv:
        samples = PF.read_samples_csv(args.samples_csv, inst.d_x, inst.d_z)
        inst = PF.PortfolioInstance(sigma=inst.sigma, risk_aversion=inst.risk_aversion,
                                    samples=samples)
    out = {"schema": SCHEMA, "action": args.action}
    if args.action in ("loss", "solve", "certificate") and args.theta is None:
        raise CliError("--theta FILE is required for action %r" % args.action)
    if args.action == "system" and args.certificate is None:
        raise CliError("--certificate FILE is required for action 'system'")
    theta = None
    if args.theta:
        theta = np.asarray(_load_json(args.theta), dtype=float)
    if args.action == "fit":
        out["theta"] = PF.fit_least_squares(inst).theta.tolist()
    elif args.action == "loss":
        out["objective"] = PF.empirical_spo_objective(PF.LinearPredictor(theta), inst)
    elif args.action == "solve":
        pred = PF.LinearPredictor(theta)
        out["decisions"] = [PF.solve_simplex_qp(pred.predict(x), inst.sigma,
                                                inst.risk_aversion).z.tolist()
                            for x, _ in inst.samples]
    elif args.action == "search":
        theta0 = theta if theta is not None else PF.fit_least_squares(inst).theta
        pred = PF.spo_local_search(inst, theta0, steps=args.steps, seed=args.seed or 0)
        out["theta"] = pred.theta.tolist()
        out["objective"] = PF.empirical_spo_objective(pred, inst)
    elif args.action == "certificate":
        cert, betas = PF.realizable_certificate(inst, theta)
        out["certificate"] = {
            "schema": SCHEMA,
            "theta": np.asarray(theta, dtype=float).tolist(),
            "scenarios": [{"z": s.z.tolist(), "eta": s.eta.tolist(),
                           "zeta": s.zeta.tolist(), "beta": b}
                          for s, b in zip(cert.scenarios, betas)],
        }
    elif args.action == "system":
        cert_data = _load_json(args.certificate)
        rep = PF.build_portfolio_system(np.asarray(cert_data["theta"], dtype=float),
                                        cert_data["scenarios"], inst,
                                        tol=args.tol if args.tol is not None else 1e-8)
        out["report"] = rep.to_dict()
        _dump(out, args)
        return 0 if rep.passed else 2
    else:
        raise CliError("unknown action %r" % args.action)
    _dump(out, args)
    if args.format == "text":
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_newsvendor(args):
    problem = _load_json(args.problem)
    inst = _newsvendor_from_json(problem)
    out = {"schema": SCHEMA, "action": args.action}
    if args.action == "solve":
        if args.theta is None:
            raise CliError("--theta VALUE is required to solve")
        model = inst.model(args.theta)
        out["decisions"] = [NV.solve_newsvendor(model, x, inst.h, inst.b)
                            for x, _ in inst.samples]
    elif args.action == "loss":
        if args.theta is None:
            raise CliError("--theta VALUE is required for loss")
        model = inst.model(args.theta)
        out["objective"] = float(sum(
            w * NV.spo_loss_newsvendor(model, x, y, inst.h, inst.b)
            for (x, y), w in zip(inst.samples, inst.weights)))
    elif args.action == "verify":
        cert = _load_json(args.certificate)
        rep = NV.verify_newsvendor_system(
            float(np.atleast_1d(np.asarray(cert["theta"], dtype=float))[0]),
            cert["scenarios"], inst,
            tol=args.tol if args.tol is not None else 1e-8)
        out["report"] = rep.to_dict()
        _dump(out, args)
        if args.format == "text":
            print("verdict:", "PASS" if rep.passed else "FAIL")
        return 0 if rep.passed else 2
    elif args.action == "gridsearch":
        if not args.grid:
            raise CliError("--grid is required for gridsearch")
        grid = [float(t) for t in args.grid.split(",")]
        out["theta"] = NV.bandwidth_grid_search(inst, grid)
    else:
        raise CliError("unknown action %r" % args.action)
    _dump(out, args)
    if args.format == "text":
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_gen(args):
    rng = np.random.default_rng(args.seed or 0)
    dims = [int(v) for v in args.dims.split(",")] if args.dims else None
    if args.kind == "portfolio":
        d_x, d_z = dims if dims else (2, 2)
        if args.n < 1 or d_x < 1 or d_z < 1:
            raise CliError("invalid dimensions")
        theta0 = rng.uniform(0.05, 0.3, (d_x, d_z))
        xs = rng.uniform(0.1, 1.0, (args.n, d_x))
        rs = xs @ theta0
        if args.noise > 0:
            rs = rs + args.noise * rng.standard_normal(rs.shape)
        B = rng.standard_normal((d_z, d_z))
        sigma = B @ B.T + d_z * np.eye(d_z)
        sigma /= np.max(np.abs(sigma))
        inst = PF.PortfolioInstance(sigma=sigma, risk_aversion=1.0,
                                    samples=list(zip(xs, rs)))
        data = inst.to_dict()
        data["theta0"] = theta0.tolist()
        data["realizable"] = bool(args.noise == 0)
    elif args.kind == "newsvendor":
        d_x = dims[0] if dims else 1
        if args.n < 1 or d_x < 1:
            raise CliError("invalid dimensions")
        xs = rng.uniform(-1.0, 1.0, (args.n, d_x))
        ys = 3.0 + 1.5 * np.sin(2.0 * xs[:, 0]) + args.noise * rng.standard_normal(args.n)
        pts = [(x.tolist(), float(y)) for x, y in zip(xs, ys)]
        inst = NV.NewsvendorInstance(h=1.0, b=3.0, centers=pts, samples=pts)
        data = inst.to_dict()
    else:
        raise CliError("unknown generator kind %r" % args.kind)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(data, fh, sort_keys=True, indent=2)
            fh.write("\n")
    else:
        print(json.dumps(data, sort_keys=True, indent=2))
    return 0


def cmd_fd_check(args):
    problem = _load_json(args.problem)
    rng = np.random.default_rng(args.seed or 0)
    tol = args.tol if args.tol is not None else 1e-6
    kind = problem.get("type")
    worst = 0.0
    if args.op == "grad-theta-cdf":
        if kind != "newsvendor_kernel":
            raise CliError("grad-theta-cdf needs a newsvendor problem")
        inst = _newsvendor_from_json(problem)
        for _ in range(args.trials):
            theta = float(rng.uniform(0.5, 2.0))
            model = inst.model(theta)
            x = rng.normal(size=model.d_x)
            y = float(rng.normal() * 2.0 + np.mean(model.centers_y))
            a = NV.grad_theta_cdf(model, y, x)
            step = 1e-5
            fd = (NV.conditional_cdf(model.with_theta(theta + step), y, x)
                  - NV.conditional_cdf(model.with_theta(theta - step), y, x)) / (2 * step)
            gap = abs(a - fd)
            # Near-zero gradients sit below the difference quotient's own
            # noise floor; absolute agreement there is the meaningful test.
            if gap <= args.atol:
                continue
            worst = max(worst, gap / max(abs(a), abs(fd), 1e-6))
    elif args.op == "lower-grad-z":
        if kind == "newsvendor_kernel":
            inst = _newsvendor_from_json(problem)
            x = inst.samples[0][0]
            lm = NV.NewsvendorLowerModel(inst, x)
            pts = [np.array([float(rng.uniform(0.0, 2.0 * np.max(lm.inst.model(1.0).centers_y) + 1.0))])
                   for _ in range(args.trials)]
            worst = ST.gradient_selftest(lm, np.array([float(rng.uniform(0.5, 2.0))]),
                                         x, pts, rtol=np.inf)
        elif kind == "spo_portfolio":
            inst = _portfolio_from_json(problem)
            lm = PF.PortfolioLowerModel(inst)
            theta = rng.standard_normal(inst.d_x * inst.d_z)
            pts = [ST.FeasibleSet.simplex(inst.d_z).project(rng.uniform(0, 1, inst.d_z))
                   for _ in range(args.trials)]
            worst = ST.gradient_selftest(lm, theta, inst.samples[0][0], pts, rtol=np.inf)
        else:
            raise CliError("unknown problem type: %r" % kind)
    else:
        raise CliError("unknown fd-check op %r" % args.op)
    out = {"schema": SCHEMA, "op": args.op, "trials": args.trials,
           "max_rel_err": worst, "tol": tol, "atol": args.atol,
           "pass": bool(worst <= tol)}
    _dump(out, args)
    if args.format == "text":
        print("max rel err %.3g (tol %.1g): %s"
              % (worst, tol, "PASS" if worst <= tol else "FAIL"))
    return 0 if worst <= tol else 2


# ---------------------------------------------------------------------------
# parser

def _common(sub):
    sub.add_argument("--tol", type=float, default=None, help="verification tolerance")
    sub.add_argument("--seed", type=int, default=None, help="seed for randomized steps")
    sub.add_argument("--report", default=None, help="write a JSON report here")
    sub.add_argument("--format", choices=("json", "text"), default="json")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mstat",
        description="Polyhedral coderivative calculus and stationarity "
                    "certificate verification")
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("cones", help="tangent/normal/critical cone queries")
    p.add_argument("--input", required=True)
    _common(p)
    p.set_defaults(func=cmd_cones)

    p = sp.add_parser("gph-normal", help="coderivative membership query")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("auto", "oracle", "direct", "explicit"),
                   default="auto")
    _common(p)
    p.set_defaults(func=cmd_gph_normal)

    p = sp.add_parser("verify", help="verify a stationarity certificate")
    p.add_argument("--problem", required=True)
    p.add_argument("--certificate", required=True)
    p.add_argument("--mode", choices=("convex", "penalized"), default="convex")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sp.add_parser("spo-portfolio", help="portfolio pipeline actions")
    p.add_argument("action", choices=("fit", "loss", "solve", "search",
                                      "certificate", "system"))
    p.add_argument("--problem", required=True)
    p.add_argument("--theta", default=None, help="JSON file with a theta matrix")
    p.add_argument("--certificate", default=None)
    p.add_argument("--samples-csv", default=None)
    p.add_argument("--steps", type=int, default=50)
    _common(p)
    p.set_defaults(func=cmd_spo_portfolio)

    p = sp.add_parser("newsvendor", help="newsvendor pipeline actions")
    p.add_argument("action", choices=("solve", "loss", "verify", "gridsearch"))
    p.add_argument("--problem", required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--certificate", default=None)
    p.add_argument("--grid", default=None, help="comma separated bandwidths")
    _common(p)
    p.set_defaults(func=cmd_newsvendor)

    p = sp.add_parser("gen", help="emit a synthetic problem")
    p.add_argument("kind", choices=("portfolio", "newsvendor"))
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--dims", default=None, help="portfolio: 'dx,dz'; newsvendor: 'dx'")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_gen)

    p = sp.add_parser("fd-check", help="finite-difference gradient audits")
    p.add_argument("--problem", required=True)
    p.add_argument("--op", choices=("grad-theta-cdf", "lower-grad-z"),
                   default="grad-theta-cdf")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--atol", type=float, default=1e-9,
                   help="absolute agreement below this skips the relative test")
    _common(p)
    p.set_defaults(func=cmd_fd_check)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
