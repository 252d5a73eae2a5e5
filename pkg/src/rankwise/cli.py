"""Command-line interface.

Subcommands: rerank, eval, reward, filter, synthesize, plan-windows, latency.
Backends are selected with --backend: an http(s) endpoint URL or one of the
deterministic mocks (identity, reverse, oracle, noisy[:rate],
malformed[:mode]).  API credentials are read from RERANK_API_KEY only.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import BackendConfig, Gateway, make_backend
from .harness import (
    cmd_eval,
    cmd_filter,
    cmd_latency,
    cmd_rerank,
    cmd_reward,
    cmd_synthesize,
    kv_render,
)
from .io import load_dataset
from .metrics import DEFAULT_GAMMA, DEFAULT_PHI, DEFAULT_RBO_P, RewardParams
from .synthesis import DEFAULT_CONSISTENCY_ALPHA
from .training import GrpoParams
from .windows import DEFAULT_STRIDE, DEFAULT_TOPN, DEFAULT_WINDOW, WindowParams, plan_windows


def _add_backend_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--backend", default="identity",
                        help="endpoint URL or mock spec (identity, reverse, oracle, "
                             "noisy[:rate], malformed[:mode])")
    parser.add_argument("--model", default="", help="model name for HTTP backends")
    parser.add_argument("--temperature", type=float, default=0.0)
    parser.add_argument("--max-tokens", type=int, default=4096)
    parser.add_argument("--timeout", type=float, default=120.0, help="request timeout (s)")
    parser.add_argument("--retries", type=int, default=2,
                        help="re-attempts after the first try")
    parser.add_argument("--concurrency", type=int, default=4)


def _add_window_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="window size w")
    parser.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="step size s")
    parser.add_argument("--topn", type=int, default=DEFAULT_TOPN, help="candidates per query")


def _add_dataset_flags(parser: argparse.ArgumentParser, qrels_required: bool):
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--queries", required=True)
    parser.add_argument("--run", required=True, help="input retrieval run file")
    parser.add_argument("--qrels", required=qrels_required, default=None)


def _backend_config(args) -> BackendConfig:
    return BackendConfig(
        endpoint=args.backend if args.backend.startswith("http") else "",
        model=args.model,
        temperature=args.temperature,
        max_tokens=args.max_tokens,
        timeout_s=args.timeout,
        retries=args.retries,
        concurrency=args.concurrency,
    )


def _gateway(args, bundle=None) -> Gateway:
    judgments = None
    if args.backend == "oracle":
        if bundle is None or bundle.qrels is None:
            raise SystemExit("--backend oracle requires a bundle with --qrels")
        judgments = bundle.oracle_judgments_by_query_text()
    config = _backend_config(args)
    backend = make_backend(
        args.backend, config=config, judgments_by_query=judgments,
        seed=getattr(args, "seed", 0),
    )
    return Gateway(backend, config)


def _window_params(args) -> WindowParams:
    return WindowParams(n=args.topn, w=args.window, s=args.stride)


def _write_report(args, pairs):
    text = kv_render(pairs)
    if getattr(args, "report", None):
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _do_rerank(args):
    bundle = load_dataset(args.corpus, args.queries, args.run, args.qrels, topn=args.topn)
    gateway = _gateway(args, bundle)
    _, report = cmd_rerank(
        bundle, gateway, params=_window_params(args), out_path=args.out,
        strict=args.strict, concurrency=args.concurrency,
    )
    print(report.render())
    _write_report(args, report.kv_lines())


def _do_eval(args):
    report = cmd_eval(args.run, args.qrels, k=args.k)
    print(report.render())
    _write_report(args, report.kv_lines())


def _do_reward(args):
    params = RewardParams(phi=args.phi, gamma=args.gamma, p=args.rbo_p)
    grpo_params = GrpoParams(epsilon=args.epsilon, beta=args.beta)
    rows, errors, losses = cmd_reward(
        args.rollouts, args.records, params=params, out_path=args.out,
        grpo_params=grpo_params,
    )
    print(f"scored {len(rows)} rollouts -> {args.out}")
    for group in sorted(losses):
        result = losses[group]
        print(f"group {group}: loss={result.loss:.6f} surrogate={result.surrogate:.6f} "
              f"kl={result.kl:.6f}")
    for err in errors:
        print(f"error: {err}", file=sys.stderr)


def _do_filter(args):
    kept, report = cmd_filter(args.records, alpha=args.alpha, out_path=args.out)
    for line in report.lines():
        print(line)


def _do_synthesize(args):
    gateway = _gateway(args)
    records, report = cmd_synthesize(
        args.input, gateway, out_path=args.out, seed=args.seed,
        concurrency=args.concurrency,
    )
    for line in report.lines():
        print(line)


def _do_plan_windows(args):
    plan = plan_windows(WindowParams(n=args.topn, w=args.window, s=args.stride), args.length)
    print(f"{len(plan)} windows for a list of {args.length}:")
    for start, end in plan:
        print(f"  [{start}, {end})")


def _do_latency(args):
    bundle = load_dataset(args.corpus, args.queries, args.run, args.qrels, topn=args.topn)
    gateway = _gateway(args, bundle)
    report = cmd_latency(
        bundle, gateway, params=_window_params(args), repeats=args.repeats,
        concurrency=args.concurrency,
    )
    print(report.render())
    _write_report(args, report.kv_lines())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankwise")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="sliding-window rerank of a retrieval run")
    _add_dataset_flags(p, qrels_required=False)
    _add_backend_flags(p)
    _add_window_flags(p)
    p.add_argument("--out", required=True, help="output run file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true",
                   help="fail on the first backend error instead of skipping the query")
    p.add_argument("--report", default=None, help="write key=value report here")
    p.set_defaults(func=_do_rerank)

    p = sub.add_parser("eval", help="NDCG@k of a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_do_eval)

    p = sub.add_parser("reward", help="score rollouts against labeled records")
    p.add_argument("--rollouts", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phi", type=float, default=DEFAULT_PHI)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--rbo-p", type=float, default=DEFAULT_RBO_P)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.0)
    p.set_defaults(func=_do_reward)

    p = sub.add_parser("filter", help="self-consistency filter for synthesis records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_CONSISTENCY_ALPHA)
    p.set_defaults(func=_do_filter)

    p = sub.add_parser("synthesize", help="teacher-label candidate lists into records")
    p.add_argument("--input", required=True, help="candidates jsonl")
    p.add_argument("--out", required=True, help="records jsonl")
    _add_backend_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_do_synthesize)

    p = sub.add_parser("plan-windows", help="show the window plan for a list length")
    _add_window_flags(p)
    p.add_argument("--length", type=int, required=True)
    p.set_defaults(func=_do_plan_windows)

    p = sub.add_parser("latency", help="seconds-per-query over repeated rerank passes")
    _add_dataset_flags(p, qrels_required=False)
    _add_backend_flags(p)
    _add_window_flags(p)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_do_latency)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
