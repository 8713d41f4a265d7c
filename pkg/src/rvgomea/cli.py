"""Command-line front end: run, bisect, tune-rates, fit-alphas, compare."""

from __future__ import annotations

import argparse
import math
import sys

from . import harness, rates

_VARIANT_CHOICES = {"rv": "rv-gomea", "irv": "irv-gomea"}


def _parse_problem(text: str) -> tuple[str, dict]:
    """Parse ``name`` or ``name:key=value,key=value`` into (name, params)."""
    if ":" not in text:
        return text, {}
    name, raw = text.split(":", 1)
    params = {}
    for item in raw.split(","):
        if not item:
            continue
        key, _, value = item.partition("=")
        try:
            params[key] = int(value)
        except ValueError:
            params[key] = float(value)
    return name, params


def _parse_linkage(text: str) -> tuple[str, int | None]:
    if text.startswith("blocks:"):
        return "blocks", int(text.split(":", 1)[1])
    if text in ("univariate", "full", "true-vig", "fitness-based"):
        return text, None
    raise argparse.ArgumentTypeError(f"unknown linkage {text!r}")


def _parse_variants(text: str) -> list[str]:
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        out.append(_VARIANT_CHOICES.get(item, item))
    return out


def _parse_ells(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", required=True, help="name or name:key=val,key=val")
    p.add_argument("--replicates", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=float, default=1e8)
    p.add_argument("--vtr", type=float, default=None, help="override the problem target")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--cost-denominator",
        choices=["total-indices", "subfunction-count"],
        default="total-indices",
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rvgomea")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="replicate sweep over dimensions and variants")
    _add_common(p_run)
    p_run.add_argument("--ell", required=True, help="comma-separated dimensions")
    p_run.add_argument("--variant", default="irv", help="rv, irv, or a comma list")
    p_run.add_argument("--linkage", default="full")
    p_run.add_argument("--pop", default="guideline", help="integer or 'guideline'")
    p_run.add_argument("--telemetry", action="store_true")

    p_bis = sub.add_parser("bisect", help="population bisection by corrected cost")
    _add_common(p_bis)
    p_bis.add_argument("--ell", type=int, required=True)
    p_bis.add_argument("--variant", default="irv")
    p_bis.add_argument("--linkage", default="full")
    p_bis.add_argument("--start", type=int, default=None)

    p_tune = sub.add_parser("tune-rates", help="tune learning rates for one cell")
    p_tune.add_argument("--problem", required=True)
    p_tune.add_argument("--kappa", type=int, required=True)
    p_tune.add_argument("--pop", type=int, required=True)
    p_tune.add_argument("--replicates", type=int, default=10)
    p_tune.add_argument("--seed", type=int, default=0)
    p_tune.add_argument("--restarts", type=int, default=5)
    p_tune.add_argument("--outer-budget", type=float, default=200.0)
    p_tune.add_argument("--out", default=None, help="append the sample to this CSV")

    p_fit = sub.add_parser("fit-alphas", help="regress rate coefficients from samples")
    p_fit.add_argument("--samples", required=True, help="samples CSV from tune-rates")
    p_fit.add_argument("--target", choices=["cov", "ams"], required=True)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--no-filter", action="store_true", help="skip the rotated-ellipsoid filter")
    p_fit.add_argument("--out", default=None)

    p_cmp = sub.add_parser("compare", help="corrected-cost ratios between two result CSVs")
    p_cmp.add_argument("--a", required=True)
    p_cmp.add_argument("--b", required=True)
    p_cmp.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        name, params = _parse_problem(args.problem)
        linkage, block = _parse_linkage(args.linkage)
        pop = "guideline" if args.pop == "guideline" else int(args.pop)
        spec = harness.ExperimentSpec(
            problem=name,
            problem_params=params,
            ells=_parse_ells(args.ell),
            variants=_parse_variants(args.variant),
            linkage=linkage,
            linkage_block_size=block,
            population=pop,
            replicates=args.replicates,
            base_seed=args.seed,
            budget=args.budget,
            vtr=args.vtr,
            cost_denominator=args.cost_denominator,
            workers=args.workers,
        )
        rows = harness.run_experiment(spec, out=args.out)
        for r in rows:
            cost = "-" if r.corrected_cost is None else f"{r.corrected_cost:.6g}"
            print(
                f"{r.problem} ell={r.ell} {r.variant} pop={r.pop} "
                f"success={r.success_rate:.2f} corrected={cost}"
            )
        return 0

    if args.command == "bisect":
        name, params = _parse_problem(args.problem)
        linkage, block = _parse_linkage(args.linkage)
        res = harness.bisect_population(
            name,
            args.ell,
            _parse_variants(args.variant)[0],
            linkage=linkage,
            linkage_block_size=block,
            start=args.start,
            replicates=args.replicates,
            base_seed=args.seed,
            budget=args.budget,
            vtr=args.vtr,
            problem_params=params,
            cost_denominator=args.cost_denominator,
            workers=args.workers,
        )
        if res.failed:
            print("bisection failed: no probed population reached the target")
            return 1
        print(f"best population {res.population} corrected cost {res.corrected_cost:.6g}")
        if args.out:
            with open(args.out, "w") as fh:
                fh.write("pop,corrected_cost\n")
                for n, c in res.probes:
                    fh.write(f"{n},{c!r}\n")
        return 0

    if args.command == "tune-rates":
        name, params = _parse_problem(args.problem)
        sample = rates.tune_rates(
            name,
            args.kappa,
            args.pop,
            replicates=args.replicates,
            base_seed=args.seed,
            problem_params=params,
            restarts=args.restarts,
            outer_budget=args.outer_budget,
        )
        state = "discarded" if sample.discarded else f"cost {sample.cost:.6g}"
        print(
            f"{sample.problem} kappa={sample.kappa} pop={sample.pop}: "
            f"eta_cov={sample.eta_cov:.4f} eta_ams={sample.eta_ams:.4f} ({state})"
        )
        if args.out:
            existing = []
            try:
                existing = rates.load_samples(args.out)
            except FileNotFoundError:
                pass
            rates.save_samples(existing + [sample], args.out)
        return 0

    if args.command == "fit-alphas":
        samples = rates.load_samples(args.samples)
        if not args.no_filter:
            samples = rates.filter_samples(samples)
        fit = rates.fit_alphas(samples, args.target, seed=args.seed)
        flag = " (degenerate)" if fit.degenerate else ""
        print(
            f"alpha=({fit.alphas[0]:.4f}, {fit.alphas[1]:.4f}, {fit.alphas[2]:.4f}) "
            f"loss={fit.loss:.6g} n={fit.sample_count}{flag}"
        )
        if args.out:
            rates.save_alpha_fit(fit, args.out, target=args.target)
        return 0

    if args.command == "compare":
        rows_a = harness.read_results_csv(args.a)
        rows_b = harness.read_results_csv(args.b)
        rows = harness.compare_ratio(rows_a, rows_b)
        for r in rows:
            ratio = "-" if r["ratio"] is None else f"{r['ratio']:.4f}"
            note = f" ({r['note']})" if r["note"] else ""
            print(f"{r['problem']} ell={r['ell']} ratio={ratio}{note}")
        if args.out:
            harness.write_compare_csv(rows, args.out)
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
