"""Command-line entry point: ``dynopt <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 no convergence or divergence,
4 ergodicity failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import aggregation, avg_reward, exact, mdp as core, models, rl, stochastic, structure
from .io import output_dir, write_csv, write_manifest

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_ERGODIC = 0, 2, 3, 4

BUILTINS = ("house-sale", "inventory", "ladder", "gridworld", "rideshare", "consumption", "bandit")


class NonConvergence(RuntimeError):
    pass


# -- model resolution -----------------------------------------------------------------


class Resolved:
    """A model in every view the commands need."""

    def __init__(self, mdp, ordered=None, sim=None, extra=None):
        self.mdp = mdp
        self.ordered = ordered
        self.sim = sim
        self.extra = extra or {}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_params(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise core.MDPValidationError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = _parse_value(v)
    return out


def resolve_model(name: str, params: dict, beta=None) -> Resolved:
    params = dict(params)
    if beta is not None:
        params["discount"] = beta
    if name not in BUILTINS:
        path = Path(name)
        if not path.exists():
            raise core.MDPValidationError(f"unknown model {name!r}: not a builtin ({', '.join(BUILTINS)}) "
                                          "and no such file")
        if params.keys() - {"discount"}:
            raise core.MDPValidationError("--param applies to builtin models only")
        m = core.load_mdp(path)
        if beta is not None:
            m = m.with_discount(beta)
        return Resolved(m)
    try:
        if name == "house-sale":
            om = models.build_house_sale(**params)
            return Resolved(om.mdp, om)
        if name == "inventory":
            om = models.build_inventory(**params)
            return Resolved(om.mdp, om)
        if name == "ladder":
            return Resolved(models.build_ladder(**params))
        if name == "gridworld":
            g = models.build_gridworld(**params)
            return Resolved(g.to_mdp(), sim=g, extra={"grid": g})
        if name == "rideshare":
            r = models.build_rideshare(**params)
            return Resolved(r.to_mdp(), sim=r)
        if name == "consumption":
            om = models.build_consumption_savings(**params)
            return Resolved(om.mdp, om)
        if name == "bandit":
            params.setdefault("priors", [[1, 1], [1, 1]])
            params.setdefault("budget", 3)
            m, states = models.build_bandit_bayes(**params)
            return Resolved(m, extra={"states": states})
    except TypeError as exc:
        raise core.MDPValidationError(f"bad parameters for {name}: {exc}") from exc
    raise AssertionError(name)


def _need_seed(args):
    if args.seed is None:
        raise core.MDPValidationError(f"'{args.command}' is stochastic: --seed is required")


def _check_tol(tol):
    if not tol > 0:
        raise core.MDPValidationError(f"tol must be > 0, got {tol}")


# -- commands ---------------------------------------------------------------------------


def cmd_solve(args, out):
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    m = res.mdp
    results, files = {}, []
    if args.method == "horizon":
        if args.horizon is None or args.horizon < 1:
            raise core.MDPValidationError("--horizon T >= 1 is required for the horizon method")
        hv = exact.backward_induction(m, args.horizon, discount=m.discount if args.beta is not None else 1.0)
        rows = [(t + 1, s, hv.values[t, s]) for t in range(hv.horizon + 1) for s in range(m.n_states)]
        files.append(write_csv(out / "values.csv", ["period", "state", "V"], rows))
        rows = [(t + 1, s, hv.policies[t, s]) for t in range(hv.horizon) for s in range(m.n_states)]
        files.append(write_csv(out / "policy.csv", ["period", "state", "action"], rows))
        results["V1"] = hv.values[0]
        print(f"backward induction over {hv.horizon} periods of {m!r}")
        for s in range(m.n_states):
            print(f"  V_1({s}) = {hv.values[0, s]:.10g}")
        return results, files
    core.require_discounted(m)
    if args.method == "vi":
        _check_tol(args.tol)
        V, stats = core.value_iteration(m, tol=args.tol, max_iter=args.max_iter)
        results.update(stats.as_dict())
        if not stats.converged:
            files.append(write_csv(out / "values.csv", ["state", "V"], enumerate(V)))
            raise NonConvergence(f"value iteration stopped after {stats.iterations} sweeps "
                                 f"with residual {stats.final_residual:.3g}")
    else:
        lp = exact.lp_formulate(m)
        if args.dump_lp:
            Path(args.dump_lp).write_text(lp.to_text())
        V, obj = exact.lp_solve(lp)
        results["objective"] = obj
        results["bellman_residual"] = float(np.max(np.abs(core.bellman_apply(m, V) - V)))
    pol = core.greedy_policy(m, V)
    files.append(write_csv(out / "values.csv", ["state", "V"], enumerate(V)))
    files.append(write_csv(out / "policy.csv", ["state", "action"], enumerate(pol)))
    print(f"solved {m!r} by {args.method}")
    for s in range(m.n_states):
        print(f"  V({s}) = {V[s]:.10g}  action {pol[s]}")
    return results, files


def cmd_aggregate(args, out):
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    m = res.mdp
    _check_tol(args.tol)
    if args.membership:
        agg = aggregation.load_aggregation(args.membership)
    elif args.blocks:
        agg = aggregation.AggregationMap.blocks(m.n_states, args.blocks)
    else:
        raise core.MDPValidationError("give --membership FILE or --blocks K")
    f, stats = aggregation.solve_aggregate(m, agg, tol=args.tol, max_iter=args.max_iter)
    if not stats.converged:
        raise NonConvergence(f"aggregate iteration did not converge in {stats.iterations} sweeps")
    V, _ = core.value_iteration(m, tol=args.tol)
    bound = aggregation.aggregation_error_bound(m, agg, V, f)
    files = [
        write_csv(out / "aggregate.csv", ["aggregate", "f"], enumerate(f)),
        write_csv(out / "values.csv", ["state", "aggregate", "V", "f_lifted"],
                  [(s, agg.membership[s], V[s], f[agg.membership[s]]) for s in range(m.n_states)]),
    ]
    print(f"aggregates: {agg.n_aggregates}  epsilon: {bound.epsilon:.6g}  "
          f"bound: {bound.bound:.6g}  max |V - f|: {bound.max_violation:.6g}  holds: {bound.holds}")
    results = stats.as_dict()
    results.update(epsilon=bound.epsilon, bound=bound.bound, max_violation=bound.max_violation,
                   holds=bound.holds)
    return results, files


def cmd_rl(args, out):
    _need_seed(args)
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    sim = res.sim or rl.MDPSimulator(res.mdp)
    beta = res.mdp.discount
    schedule = rl.VisitSchedule(constant=args.lr) if args.lr is not None else rl.VisitSchedule()
    explore = rl.epsilon_greedy(args.epsilon)
    if args.total_steps is not None:
        budget = dict(steps=args.total_steps)
    else:
        budget = dict(episodes=args.episodes, steps_per_episode=args.steps)
    rng = np.random.default_rng(args.seed)
    if args.algo == "q":
        q, stats = rl.q_learning(sim, beta, schedule, explore, rng=rng, **budget)
    elif args.algo == "sarsa":
        q, stats = rl.sarsa(sim, beta, schedule, explore, rng=rng, **budget)
    else:
        feats = rl.one_hot_features(sim.n_states, sim.n_actions)
        lin, stats = rl.q_learning_linear(sim, feats, beta, schedule, explore, refresh=args.refresh,
                                          rng=rng, **budget)
        q = lin.table(sim.n_states, sim.feasible)
    pol = rl.greedy_from_q(q)
    rows = [(s, a, q[s, a]) for s in range(q.shape[0]) for a in sim.feasible[s]]
    files = [write_csv(out / "q.csv", ["state", "action", "Q"], rows),
             write_csv(out / "policy.csv", ["state", "action"], enumerate(pol))]
    results = {"steps": stats.steps, "episodes": stats.episodes}
    q_star = core.q_value_iteration(res.mdp)[0]
    results["q_sup_error"] = core.q_sup_distance(res.mdp, q, q_star)
    grid = res.extra.get("grid")
    if grid is not None:
        text = grid.format_policy(pol)
        (out / "policy.txt").write_text(text)
        files.append(out / "policy.txt")
        print(text, end="")
    else:
        for s, a in enumerate(pol):
            print(f"  state {s}: action {a}")
    print(f"sup |Q - Q*| = {results['q_sup_error']:.6g}")
    return results, files


def _load_policy(spec, m):
    if spec in (None, "uniform"):
        return core.uniform_policy(m)
    data = json.loads(Path(spec).read_text())
    return core.as_stochastic(m, np.asarray(data))


def cmd_avg(args, out):
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    m = res.mdp
    pi = _load_policy(args.policy, m)
    results, files = {}, []
    if args.op in ("rho", "h"):
        sol = avg_reward.differential_values(m, pi, args.reference)
        results.update(rho=sol.rho, poisson_residual=avg_reward.poisson_residual(m, sol))
        print(f"rho = {sol.rho:.12g}")
        if args.op == "h":
            files.append(write_csv(out / "differential.csv", ["state", "lambda", "h"],
                                   [(s, sol.lam[s], sol.h[s]) for s in range(m.n_states)]))
            files.append(write_csv(out / "q.csv", ["state", "action", "Q", "A"],
                                   [(s, a, sol.q[s, a], sol.advantage[s, a])
                                    for s in range(m.n_states) for a in m.feasible[s]]))
        else:
            files.append(write_csv(out / "rho.csv", ["rho"], [(sol.rho,)]))
        return results, files
    if args.op == "pg":
        r = avg_reward.projected_policy_gradient(m, pi, alpha=args.alpha, iters=args.iters)
        files.append(write_csv(out / "rho.csv", ["iteration", "rho"], enumerate(r.rho)))
        files.append(write_csv(out / "policy.csv", ["state", "action", "prob"],
                               [(s, a, r.policy[s, a]) for s in range(m.n_states) for a in m.feasible[s]]))
        results.update(rho=r.rho[-1], iterations=r.iterations, converged=r.converged)
        print(f"rho after {r.iterations} steps: {r.rho[-1]:.12g}")
        return results, files
    _need_seed(args)
    sim = res.sim or rl.MDPSimulator(m)
    policy = avg_reward.SoftmaxPolicy.tabular(m.mask)
    rng = np.random.default_rng(args.seed)
    if args.op == "reinforce":
        theta = np.zeros(policy.dim)
        # one generator per trajectory so runs of different length share a prefix
        est = np.mean([avg_reward.reinforce_gradient_estimate(sim, policy, theta, args.horizon,
                                                              np.random.default_rng([args.seed, i]))
                       for i in range(args.episodes)], axis=0)
        exact_g = avg_reward.softmax_gradient_exact(m, policy, theta)
        files.append(write_csv(out / "gradient.csv", ["k", "estimate", "exact"],
                               [(k, est[k], exact_g[k]) for k in range(policy.dim)]))
        results["sup_error"] = float(np.max(np.abs(est - exact_g)))
        print(f"sup |estimate - exact| = {results['sup_error']:.6g}")
        return results, files
    feats = policy.features
    ac = avg_reward.actor_critic(sim, policy, feats, np.zeros(policy.dim), np.zeros(policy.dim),
                                 args.critic_step, args.actor_step, args.rho_step, args.steps, rng)
    every = max(1, args.steps // 1000)
    files.append(write_csv(out / "rho.csv", ["step", "rho"],
                           [(t, ac.rho[t]) for t in range(0, args.steps + 1, every)]))
    final = policy.probs(ac.theta)
    results.update(rho_estimate=ac.rho[-1], rho_exact=avg_reward.average_reward(m, final))
    print(f"running rho {ac.rho[-1]:.6g}, exact rho of final policy {results['rho_exact']:.6g}")
    return results, files


def cmd_iter(args, out):
    _need_seed(args)
    sched = stochastic.StepSchedule.parse(args.schedule)
    rng = np.random.default_rng(args.seed)
    results, files = {"robbins_monro": stochastic.robbins_monro_check(sched, args.steps).satisfied}, []
    if args.variant == "noisy-gd":
        mu = np.asarray(args.target, dtype=float)
        amp = args.noise
        traj = stochastic.noisy_gradient_descent(
            lambda x: x - mu, lambda g: g.uniform(-amp, amp, size=mu.size), np.zeros(mu.size), sched,
            args.steps, rng, f=lambda x: 0.5 * float((x - mu) @ (x - mu)))
        gam = np.r_[traj.gamma, np.nan]
        rows = [(t, traj.f[t], traj.grad_norm[t], gam[t], *traj.x[t]) for t in range(traj.steps + 1)]
        xs = [f"x{i}" for i in range(mu.size)]
        files.append(write_csv(out / "trajectory.csv", ["t", "f", "grad_norm", "gamma", *xs], rows))
        results["final_grad_norm"] = traj.grad_norm[-1]
    elif args.variant == "sa":
        samples = rng.normal(args.target[0], 1.0, size=args.steps)
        x = stochastic.stochastic_approximation_mean(samples, 0.0, sched)
        gam = np.r_[sched.array(args.steps), np.nan]
        files.append(write_csv(out / "trajectory.csv", ["t", "x", "gamma"],
                               [(t, x[t], gam[t]) for t in range(args.steps + 1)]))
        results["final"] = x[-1]
        results["sample_mean"] = float(samples.mean())
    else:
        X, y = stochastic.synthetic_least_squares(seed=args.data_seed)
        theta_hat = stochastic.normal_equations(X, y)
        tr = stochastic.sgd_least_squares(X, y, np.zeros(X.shape[1]), sched, args.batch, args.steps, rng)
        gam = np.r_[tr.gamma, np.nan]
        rows = [(t, tr.loss[t], gam[t], *tr.theta[t]) for t in range(args.steps + 1)]
        ths = [f"theta{i}" for i in range(X.shape[1])]
        files.append(write_csv(out / "trajectory.csv", ["t", "loss", "gamma", *ths], rows))
        results["distance_to_normal_equations"] = float(np.linalg.norm(tr.theta[-1] - theta_hat))
        results["theta"] = tr.theta[-1]
    for k, v in results.items():
        print(f"{k}: {v}")
    return results, files


def cmd_check(args, out):
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    m = res.mdp
    core.require_discounted(m)
    om = res.ordered or models.OrderedModel(m, np.arange(m.n_states), np.arange(m.n_actions))
    V, stats = core.value_iteration(m, tol=1e-11)
    files = [write_csv(out / "values.csv", ["state", "V"], enumerate(V))]
    info = om.info or {}
    reports = []
    if args.property == "monotone":
        reports.append(structure.check_monotone_value(om, V))
        if om.state_coords.shape[1] <= 2:
            reports.append(structure.check_monotone_hypotheses(om))
    elif args.property == "concave":
        if "incomes" in info:
            reports.append(structure.check_concave_value(V.reshape(-1, len(info["incomes"]))))
        elif om.state_coords.shape[1] == 1:
            reports.append(structure.check_concave_value(V))
        else:
            raise core.MDPValidationError("concavity is checked on 1-d state grids")
    elif args.property == "supermodular":
        sc = om.state_coords
        if sc.shape[1] != 2:
            raise core.MDPValidationError("supermodularity is checked on 2-d state grids")
        table = np.full(tuple(sc.max(axis=0) + 1), np.nan)
        table[sc[:, 0], sc[:, 1]] = V
        reports.append(structure.check_supermodular(table))
    elif args.property == "ascending":
        reports.append(structure.check_ascending_policy(om, V))
    else:
        if "incomes" not in info:
            raise core.MDPValidationError("the envelope check runs on the consumption model")
        util, du = models.sqrt_utility, lambda c: 0.5 / np.sqrt(c)
        worst, n_checked, n_skipped = 0.0, 0, 0
        for w in range(len(info["wealth"])):
            for y in range(len(info["incomes"])):
                ec = structure.consumption_envelope_check(om, V, w, y, util, du)
                if ec.skipped:
                    n_skipped += 1
                    continue
                n_checked += 1
                worst = max(worst, ec.gap - ec.tolerance)
        reports.append(structure.StructureReport("envelope", worst <= 0, max(worst, 0.0),
                                                 notes=f"{n_checked} points checked, {n_skipped} skipped"))
    for rep in reports:
        print(rep)
    payload = [r.as_dict() for r in reports]
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    files.append(out / "report.json")
    return {"reports": payload, "vi": stats.as_dict()}, files


def cmd_model(args, out):
    if args.validate:
        m = core.load_mdp(args.validate)
        print(f"valid: {m!r}")
        return {"valid": True}, []
    if not args.model:
        raise core.MDPValidationError("give --validate FILE or --model NAME")
    res = resolve_model(args.model, parse_params(args.param), args.beta)
    m = res.mdp
    files = []
    if args.export:
        core.save_mdp(m, args.export)
    print(repr(m))
    print(f"max |R| = {m.max_abs_reward:.6g}")
    for s in range(m.n_states):
        print(f"  state {s}: actions {list(m.feasible[s])}")
    return {"n_states": m.n_states, "n_actions": m.n_actions, "discount": m.discount}, files


COMMANDS = {"solve": cmd_solve, "aggregate": cmd_aggregate, "rl": cmd_rl, "avg": cmd_avg,
            "iter": cmd_iter, "check": cmd_check, "model": cmd_model}


# -- parser -----------------------------------------------------------------------------


def _model_args(p, required=True):
    p.add_argument("--model", required=required,
                   help=f"builtin name ({', '.join(BUILTINS)}) or model JSON path")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="builtin parameter, value parsed as JSON (repeatable)")
    p.add_argument("--beta", type=float, help="override the discount factor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynopt", description="Finite MDP solvers and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default $DYNOPT_OUTPUT_DIR or ./dynopt-out)")
        return p

    p = add("solve", "solve a discounted or finite-horizon model exactly")
    _model_args(p)
    p.add_argument("--method", choices=("vi", "lp", "horizon"), default="vi")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--horizon", type=int)
    p.add_argument("--dump-lp", help="write the LP in text form to this path")

    p = add("aggregate", "hard state aggregation")
    _model_args(p)
    p.add_argument("--membership", help="aggregation map JSON")
    p.add_argument("--blocks", type=int, help="consecutive equal blocks instead of a map file")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = add("rl", "tabular and linear Q-learning, SARSA")
    _model_args(p)
    p.add_argument("--algo", choices=("q", "sarsa", "linq"), default="q")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--steps", type=int, default=200, help="steps per episode")
    p.add_argument("--total-steps", type=int, help="one continuing run of this length instead of episodes")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--lr", type=float, help="constant step; default 1 / (1 + visits)")
    p.add_argument("--refresh", type=int, default=1, help="target refresh period for linq")

    p = add("avg", "average-reward evaluation and policy gradients")
    _model_args(p)
    p.add_argument("--op", choices=("rho", "h", "pg", "reinforce", "ac"), default="rho")
    p.add_argument("--policy", help="'uniform' or JSON file with actions or a probability table")
    p.add_argument("--reference", type=int, default=0, help="state with h = 0")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--episodes", type=int, default=2000, help="REINFORCE trajectories")
    p.add_argument("--steps", type=int, default=100_000, help="actor-critic steps")
    p.add_argument("--critic-step", type=float, default=0.01)
    p.add_argument("--actor-step", type=float, default=0.01)
    p.add_argument("--rho-step", type=float, default=0.001)

    p = add("iter", "stochastic iterative methods")
    p.add_argument("--variant", choices=("noisy-gd", "sa", "sgd"), default="noisy-gd")
    p.add_argument("--schedule", default="harmonic:1", help="constant:G | harmonic:C[:SCALE] | power:C:P")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--target", type=float, nargs="+", default=[1.0, -2.0],
                   help="minimizer for noisy-gd; first entry is the sample mean for sa")
    p.add_argument("--noise", type=float, default=1.0, help="uniform noise half-width for noisy-gd")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--data-seed", type=int, default=0, help="seed of the least-squares data")

    p = add("check", "structural properties of the value function and policy")
    _model_args(p)
    p.add_argument("--property", required=True,
                   choices=("monotone", "concave", "supermodular", "ascending", "envelope"))

    p = add("model", "validate, describe or export a model")
    _model_args(p, required=False)
    p.add_argument("--validate", metavar="FILE")
    p.add_argument("--export", metavar="FILE")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    out = output_dir(getattr(args, "out", None))
    try:
        results, files = COMMANDS[args.command](args, out)
    except (core.MDPValidationError, exact.LPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except avg_reward.NotErgodicError as exc:
        print(f"ergodicity failure: {exc}", file=sys.stderr)
        return EXIT_ERGODIC
    except (NonConvergence, rl.DivergenceError, stochastic.DivergenceError, ArithmeticError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if files:
        params = {k: v for k, v in vars(args).items() if k not in ("command", "seed", "out")}
        write_manifest(out / "manifest.json", args.command, argv, params, args.seed, results, files)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
