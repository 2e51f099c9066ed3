"""Command-line entry point: ``fstripe <command> ...``.

Commands: features, attend, bench, approx-error, train, eval. Every command
takes ``--seed`` and ``--config`` (a flat key=value file whose keys set
defaults for the command's options; explicit flags win).
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench, io, metrics, net, tasks
from .attention import (AttentionConfig, AttentionInputs, assemble_pe_qk, exact_rpe_attention,
                        fstripe_attention, init_attention_params, kernel_attention, positional_features,
                        softmax_attention)
from .errors import DivergenceError, InvalidDataError, ParseError
from .features import FourierParams, rff_features, sample_gaussian, sff_features, subseed
from .grid import grid_from_labels, linear_grid, load_labels


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(text: str, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))


def _csv_out(header, rows, out):
    if out:
        io.write_csv(header, rows, path=out)
    else:
        io.write_csv(header, rows, stream=sys.stdout)


def _grid(args):
    if getattr(args, "labels", None):
        labels = load_labels(args.labels)
        levels = args.levels.split(",") if args.levels else list(labels)
        return grid_from_labels(labels, levels)
    return linear_grid(args.length)


# -- commands ------------------------------------------------------------------

def cmd_features(args) -> int:
    grid = _grid(args)
    params = FourierParams.init(args.n_freq, grid.levels, seed=args.seed, R=args.R)
    if args.zero_freq:
        params.frequencies[:] = 0.0
    if args.kind == "rff":
        feats = rff_features(grid, params, args.side)
    else:
        Z = sample_gaussian(subseed(args.seed, 0, 0), 2 * params.n_freq, args.R)
        feats = sff_features(grid, params, args.side, Z)
    doc = io.matrix_to_json(feats.matrix)
    doc["kind"] = feats.kind
    _emit(io.write_json(doc), args.out)
    return 0


def cmd_attend(args) -> int:
    doc = io.read_json(args.input)
    if not isinstance(doc, dict):
        raise ParseError(f"{args.input}: expected a JSON object")
    missing = {"Q", "K", "V"} - doc.keys()
    if missing:
        raise ParseError(f"{args.input}: missing {sorted(missing)}")
    Q, K, V = (io.matrix_from_json(doc[k], k) for k in ("Q", "K", "V"))
    grid_q = io.grid_from_json(doc["grid_q"], "grid_q") if "grid_q" in doc else linear_grid(Q.shape[-2])
    grid_k = io.grid_from_json(doc["grid_k"], "grid_k") if "grid_k" in doc else linear_grid(K.shape[-2])
    try:
        inputs = AttentionInputs(Q, K, V, grid_q, grid_k)
    except ValueError as exc:
        raise InvalidDataError(f"{args.input}: {exc}") from exc
    H, _, D = inputs.Q.shape
    config = AttentionConfig(heads=H, head_dim=D, causal=args.causal, feature_map=args.feature_map,
                             pe_kind=args.pe, R=args.R, n_freq=args.n_freq, seed=args.seed)
    result = {}
    if args.exact:
        if config.pe_kind == "none":
            outs = [softmax_attention(inputs.Q[h], inputs.K[h], inputs.V[h], causal=config.causal)
                    for h in range(H)]
            logits = [inputs.Q[h] @ inputs.K[h].T for h in range(H)]
        else:
            params = init_attention_params(config, grid_q.levels)
            outs, logits = [], []
            for h in range(H):
                single = AttentionInputs(inputs.Q[h], inputs.K[h], inputs.V[h], grid_q, grid_k)
                o, lg = exact_rpe_attention(single, [params[h]], config, return_logits=True)
                if config.pe_kind == "sff":
                    # logits realized by the stochastic features rather than the closed form
                    fq = [positional_features(grid_q, params[h][d], "Q", "sff", config.seed, h, d) for d in range(D)]
                    fk = [positional_features(grid_k, params[h][d], "K", "sff", config.seed, h, d) for d in range(D)]
                    q_hat, k_hat = assemble_pe_qk(inputs.Q[h], inputs.K[h], fq, fk)
                    lg = q_hat @ k_hat.T
                outs.append(o)
                logits.append(lg)
        out, lg = np.stack(outs), np.stack(logits)
        result["logits"] = io.matrix_to_json(lg[0] if inputs.squeezed else lg)
    elif config.pe_kind == "none":
        out = kernel_attention(inputs, config)
    else:
        out = fstripe_attention(inputs, init_attention_params(config, grid_q.levels), config)
    if out.ndim == 3 and inputs.squeezed:
        out = out[0]
    result["output"] = io.matrix_to_json(out)
    _emit(io.write_json(result), args.out)
    return 0


def cmd_bench(args) -> int:
    if len(set(args.lengths)) < 2:
        raise ValueError("bench needs at least two lengths")
    config = AttentionConfig(heads=args.heads, head_dim=args.head_dim, causal=True,
                             feature_map=args.feature_map, pe_kind="rff", n_freq=args.n_freq, seed=args.seed)
    rows = bench.run_bench(args.methods.split(","), args.lengths, config, reps=args.reps,
                           threads=args.threads or None, seed=args.seed)
    _csv_out(bench.BENCH_HEADER, [r.as_tuple() for r in rows], args.out)
    failed = [r for r in rows if r.status not in ("ok", "oom")]
    return 1 if failed else 0


def cmd_approx_error(args) -> int:
    if not args.R:
        raise ValueError("R list is empty")
    grid = _grid(args)
    params = FourierParams.init(args.n_freq, grid.levels, seed=args.seed)
    rows = bench.approx_error(args.R, args.seeds, grid, params, base_seed=args.seed)
    _csv_out(bench.APPROX_HEADER, rows, args.out)
    return 0


_MODEL_KEYS = ("layers", "heads", "model_dim", "ff_dim", "pe_kind", "feature_map", "n_freq", "R", "chunk")
_TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "warmup_steps", "epoch_decay", "clip_norm", "max_steps")


def cmd_train(args) -> int:
    structure = tuple(args.structure.split(",")) if args.structure else ("time",)
    mcfg = net.ModelConfig(structure=structure, seed=args.seed,
                           **{k: getattr(args, k) for k in _MODEL_KEYS})
    tcfg = net.TrainConfig(curriculum=not args.no_curriculum, seed=args.seed,
                           **{k: getattr(args, k) for k in _TRAIN_KEYS})
    if args.task == "chord":
        data = tasks.chord_task(args.pieces, args.length, seed=args.seed)
    else:
        data = tasks.copy_task(args.pieces, args.length, seed=args.seed)
    model = net.Model(mcfg)
    if args.save_init:
        net.save_checkpoint(model, args.save_init)
    try:
        model, log = net.train(model, data, tcfg)
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            net.save_checkpoint(exc.checkpoint, args.out)
        if exc.log:
            net.write_log(exc.log, args.log)
        raise
    net.save_checkpoint(model, args.out)
    if args.log:
        net.write_log(log, args.log)
    return 0


def cmd_eval(args) -> int:
    if len(args.target) != len(args.prediction):
        raise ValueError("give one --prediction per --target")
    tracks = _ints(args.tracks) if args.tracks else None
    rows = []
    for t_path, p_path in zip(args.target, args.prediction):
        piece, target = io.read_pianoroll(t_path)
        _, pred = io.read_pianoroll(p_path)
        if target.shape != pred.shape:
            raise InvalidDataError(f"{t_path} and {p_path} differ in shape: {target.shape} vs {pred.shape}")
        scores = metrics.evaluate(target, pred, tracks)
        rows.append((piece, scores["CS"], scores["SSMD"], scores["GS"], scores["NDD"]))
    _csv_out(("piece_id", "CS", "SSMD", "GS", "NDD"), rows, args.out)
    return 0


# -- parser --------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value file supplying option defaults")
    p.add_argument("--out", help="output path (stdout when omitted)")


def _grid_args(p):
    p.add_argument("--labels", help="label file (JSON); omitted -> linear grid")
    p.add_argument("--levels", help="comma-separated level names to use from the label file")
    p.add_argument("--length", type=int, default=64, help="linear grid length when no labels are given")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fstripe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="dump a positional feature matrix as JSON")
    _common(p)
    _grid_args(p)
    p.add_argument("--kind", choices=("rff", "sff"), default="rff")
    p.add_argument("--side", choices=("Q", "K"), default="Q")
    p.add_argument("--n-freq", type=int, default=8)
    p.add_argument("--R", type=int, default=64)
    p.add_argument("--zero-freq", action="store_true", help="set all frequencies to 0")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("attend", help="run attention on Q/K/V from a JSON file")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--pe", choices=("none", "sff", "rff"), default="rff")
    p.add_argument("--causal", action="store_true")
    p.add_argument("--feature-map", choices=("elu", "prf"), default="elu")
    p.add_argument("--exact", action="store_true", help="softmax oracle; also writes logits")
    p.add_argument("--n-freq", type=int, default=8)
    p.add_argument("--R", type=int, default=64)
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("bench", help="runtime and memory scaling, exact RPE vs F-StrIPE (CSV)")
    _common(p)
    p.add_argument("--methods", default="fstripe,exact")
    p.add_argument("--lengths", type=_ints, default=[512, 4096])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--threads", type=int, default=1, help="BLAS threads; 0 leaves the default")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--head-dim", type=int, default=8)
    p.add_argument("--n-freq", type=int, default=4)
    p.add_argument("--feature-map", choices=("elu", "prf"), default="elu")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("approx-error", help="SFF vs closed-form kernel error per R (CSV)")
    _common(p)
    _grid_args(p)
    p.add_argument("--R", type=_ints, default=[16, 64, 256, 1024])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n-freq", type=int, default=8)
    p.set_defaults(func=cmd_approx_error)

    p = sub.add_parser("train", help="train the desk-scale model on a synthetic task")
    _common(p)
    p.add_argument("--task", choices=("chord", "copy"), default="chord")
    p.add_argument("--pieces", type=int, default=64)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--structure", default="chord", help="comma-separated levels (time, melody, chord, phrase)")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("--save-init", help="also write the untrained checkpoint here")
    p.add_argument("--no-curriculum", action="store_true")
    defaults_m, defaults_t = net.ModelConfig(), net.TrainConfig()
    for key in _MODEL_KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=type(getattr(defaults_m, key)),
                       default=getattr(defaults_m, key))
    for key in _TRAIN_KEYS:
        default = getattr(defaults_t, key)
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=int if key == "max_steps" else type(default),
                       default=default)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="CS/SSMD/GS/NDD for target vs prediction pianorolls (CSV)")
    _common(p)
    p.add_argument("--target", action="append", required=True)
    p.add_argument("--prediction", action="append", required=True)
    p.add_argument("--tracks", help="comma-separated track indices to evaluate (default: all)")
    p.set_defaults(func=cmd_eval)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = io.read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ParseError(f"{args.config}: unknown keys for {args.command}: {unknown}")
    for key, value in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            values[key] = bool(value)
        elif action.type is not None:
            values[key] = action.type(str(value))
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def args_command(argv) -> str:
    argv = sys.argv[1:] if argv is None else argv
    return argv[0] if argv else ""


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (ParseError, InvalidDataError, FileNotFoundError, ValueError, DivergenceError) as exc:
        print(f"fstripe {args_command(argv)}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
