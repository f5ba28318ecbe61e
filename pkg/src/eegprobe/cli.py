"""``eegprobe`` command line: synth, train, eval, rank, am, deconv, saliency, psd.

Every command that writes artifacts also writes ``<output>.provenance``, a
flat key=value file holding the full flag set. Passing it back through
``--config`` reproduces the run; flags given on the command line win over
config values.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine, interpret, spectral, training
from .dataset import UNLABELED, LabeledDataset, load_epd, save_epd
from .errors import EEGProbeError
from .fileio import load_weights, read_keyvalue, save_weights, write_keyvalue
from .synthdata import SynthSpec, default_components, generate

log = logging.getLogger("eegprobe")

# Flags that steer the process but are not part of a run's recorded inputs.
_NOT_RECORDED = {"config", "command", "verbose", "func"}


def _neuron(text: str) -> tuple[int | None, int]:
    """``"0"``/``"1"`` is a classification neuron; ``"L:U"`` is layer L, unit U."""
    try:
        if ":" in text:
            layer, unit = text.split(":", 1)
            return int(layer), int(unit)
        return None, int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"neuron must be 0, 1 or LAYER:UNIT, got {text!r}")


def _selector(spec: engine.ModelSpec, neuron) -> engine.NeuronSelector:
    layer, unit = neuron
    if layer is None:
        return engine.class_neuron(spec, unit)
    return engine.NeuronSelector(layer, unit)


def _bands(text: str) -> list[tuple[float, float]]:
    out = []
    for part in filter(None, text.split(",")):
        try:
            lo, hi = part.split(":")
            out.append((float(lo), float(hi)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bands must look like 4:8,8:13, got {text!r}")
    return out


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> None:
    spec = SynthSpec(
        channels=args.channels,
        time=args.time,
        fs=args.fs,
        subjects_per_class=args.subjects_per_class,
        samples_per_subject=args.samples_per_subject,
        noise_exponent=args.noise_exponent,
        planted=default_components(args.channels, args.theta_amp, args.alpha_amp),
        rng_seed=args.seed,
    )
    ds = generate(spec)
    save_epd(args.out, ds)
    Path(f"{args.out}.spec.json").write_text(spec.to_json() + "\n")
    print(f"wrote {len(ds)} samples ({spec.channels}x{spec.time} @ {spec.fs:g} Hz) to {args.out}")


def _model(args, input_shape) -> engine.ModelSpec:
    if args.arch == "rscnn":
        return engine.rscnn(input_shape, dropout_rate=args.dropout)
    return engine.toy_cnn(input_shape, filters=args.filters, hidden=args.hidden, dropout_rate=args.dropout)


def cmd_train(args) -> None:
    ds = load_epd(args.data)
    val = load_epd(args.val) if args.val else None
    spec = _model(args, ds.shape)
    config = training.TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        rng_seed=args.seed,
        dropout_rate=args.dropout,
        patience=args.patience,
    )
    weights, history = training.train(spec, ds, config, validation=val)
    save_weights(args.out, spec, weights)
    training.write_history_csv(args.history or f"{args.out}.history.csv", history)
    if history:
        last = history[-1]
        print(f"epoch {last.epoch}: loss {last.loss:.4f}, train acc {last.train_acc:.3f}")


def cmd_eval(args) -> None:
    spec, weights = load_weights(args.weights)
    ds = load_epd(args.data)
    ds.check_labeled()
    ev = training.evaluate(spec, weights, ds)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "subject_id", "label", "prediction", "outcome", "logit0", "logit1"])
        for i, (sid, y, p, o) in enumerate(zip(ds.subject_ids, ds.labels, ev.predictions, ev.outcomes)):
            w.writerow([i, sid, y, p, o.value, repr(float(ev.logits[i, 0])), repr(float(ev.logits[i, 1]))])
    print(f"per-sample accuracy {ev.sample_accuracy:.4f}, per-subject accuracy {ev.subject_accuracy:.4f}")


def cmd_rank(args) -> None:
    spec, weights = load_weights(args.weights)
    ds = load_epd(args.data)
    selector = _selector(spec, args.neuron)
    outcome = None if args.outcome == "all" else args.outcome
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "sample_index", "subject_id", "outcome", "score"])
        if args.per_subject:
            ranked = interpret.rank_subjects(spec, weights, ds, selector, outcome, args.k)
            for r, s in enumerate(ranked, 1):
                w.writerow([r, "", s.subject_id, args.outcome, repr(s.score)])
        else:
            ranked = interpret.rank_samples(spec, weights, ds, selector, outcome)
            if args.k:
                ranked = ranked[: args.k]
            for r, s in enumerate(ranked, 1):
                w.writerow([r, s.index, s.subject_id, s.outcome.value, repr(s.score)])
    print(f"ranked {len(ranked)} entries into {args.out}")


def cmd_am(args) -> None:
    spec, weights = load_weights(args.weights)
    selector = _selector(spec, args.neuron)
    config = interpret.AMConfig(
        step_size=args.step_size,
        iterations=args.iterations,
        jitter_max=args.jitter,
        tv_weight=args.tv_weight,
        l1_weight=args.l1_weight,
        rng_seed=args.seed,
        init_scale=args.init_scale,
    )
    results = interpret.activation_maximize_runs(spec, weights, selector, config, runs=args.runs)
    label = selector.unit if selector.layer == spec.classifier_layer else UNLABELED
    ds = LabeledDataset(
        np.stack([r.x for r in results]), [label] * len(results), list(range(len(results))), args.fs
    )
    save_epd(args.out, ds)
    with open(args.activations or f"{args.out}.activations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "iteration", "activation"])
        for run, r in enumerate(results):
            for it, a in enumerate(r.activations):
                w.writerow([run, r.seed, it, repr(float(a))])
    finals = [r.activations[-1] for r in results]
    print(f"{len(results)} runs, final activation mean {np.mean(finals):.4g}")


def cmd_deconv(args) -> None:
    spec, weights = load_weights(args.weights)
    ds = load_epd(args.data)
    if not 0 <= args.sample < len(ds):
        raise EEGProbeError(f"sample {args.sample} out of range for {len(ds)} samples")
    layer = spec.layers[args.layer] if 0 <= args.layer < len(spec.layers) else None
    if layer is None or layer.kind is not engine.Kind.CONV:
        raise EEGProbeError(f"layer {args.layer} is not a convolution")
    filters = range(layer.units) if args.all else [args.filter]
    _, _, trace = engine.forward(spec, weights, ds.samples[args.sample], record_trace=True)
    recs, sums = [], []
    for f in filters:
        sel = engine.NeuronSelector(args.layer, f)
        recs.append(interpret.deconvnet_reconstruct(spec, weights, trace, sel))
        sums.append(float(engine.relu(trace.outputs[args.layer][f]).sum()))
    out = LabeledDataset(np.stack(recs), [UNLABELED] * len(recs), list(filters), ds.fs)
    save_epd(args.out, out)
    inactive = [f for f, s in zip(filters, sums) if s == 0.0]
    with open(f"{args.out}.filters.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "active", "rectified_sum"])
        for f, s in zip(filters, sums):
            w.writerow([f, int(s > 0), repr(s)])
    print(f"{len(recs)} reconstructions, inactive filters: {inactive if inactive else 'none'}")


def cmd_saliency(args) -> None:
    spec, weights = load_weights(args.weights)
    ds = load_epd(args.data)
    if args.subject is not None:
        idx = np.flatnonzero(ds.subject_ids == args.subject)
        if idx.size == 0:
            raise EEGProbeError(f"no samples for subject {args.subject}")
    else:
        if not 0 <= args.sample < len(ds):
            raise EEGProbeError(f"sample {args.sample} out of range for {len(ds)} samples")
        idx = np.array([args.sample])
    x = ds.samples[idx]
    maps = interpret.saliency(spec, weights, x, args.neuron)
    masked = np.stack([interpret.saliency_mask(xi, mi, args.quantile).masked for xi, mi in zip(x, maps)])
    sids = ds.subject_ids[idx]
    save_epd(args.out, LabeledDataset(maps, [UNLABELED] * len(idx), sids, ds.fs))
    masked_out = args.masked_out or f"{args.out}.masked.epd"
    save_epd(masked_out, LabeledDataset(masked, ds.labels[idx], sids, ds.fs))
    print(f"{len(idx)} saliency maps -> {args.out}, masked samples -> {masked_out}")


def cmd_psd(args) -> None:
    ds = load_epd(args.data)
    results = [spectral.welch_psd(x, ds.fs, args.window, args.overlap) for x in ds.samples]
    if args.group_by == "class":
        keys = [f"class{int(y)}" if y != UNLABELED else "unlabeled" for y in ds.labels]
    elif args.group_by == "subject":
        keys = [f"subject{int(s)}" for s in ds.subject_ids]
    else:
        keys = ["all"] * len(ds)
    names = list(dict.fromkeys(keys))
    groups = {}
    for name in names:
        members = [r for r, k in zip(results, keys) if k == name]
        if len(members) >= 2:
            groups[name] = spectral.group_ci(members)
        else:
            m = members[0].channel_mean
            groups[name] = spectral.GroupSpectrum(members[0].frequencies, m, m, m, 1)
    difference = None
    if "class0" in groups and "class1" in groups:
        difference = spectral.class_difference(groups["class0"], groups["class1"])
    spectral.write_groups_csv(args.out, groups, difference)
    if args.svg:
        spectral.plot_spectra_svg(args.svg, groups, difference, title=Path(args.data).name)
    if args.bands:
        band_names = {f"{lo:g}-{hi:g}Hz": (lo, hi) for lo, hi in args.bands}
        powers = {}
        for name in names:
            members = [r for r, k in zip(results, keys) if k == name]
            powers[name] = {
                b: np.mean([spectral.band_power(r, band) for r in members], axis=0)
                for b, band in band_names.items()
            }
        spectral.write_band_csv(f"{args.out}.bands.csv", band_names, powers)
    peaks = spectral.find_peaks(groups[names[0]].mean, groups[names[0]].frequencies, (1.0, ds.fs / 2))
    top = f"{peaks[0].frequency:g} Hz" if peaks else "none"
    print(f"{len(names)} group(s) -> {args.out}; strongest peak of {names[0]}: {top}")


# ---------------------------------------------------------------------------
# parser


_REQUIRED = {
    "synth": ["out"],
    "train": ["data", "out"],
    "eval": ["weights", "data", "out"],
    "rank": ["weights", "data", "out"],
    "am": ["weights", "out"],
    "deconv": ["weights", "data", "out"],
    "saliency": ["weights", "data", "out"],
    "psd": ["data", "out"],
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="eegprobe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic two-class dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=24)
    p.add_argument("--time", type=int, default=256)
    p.add_argument("--fs", type=float, default=128.0)
    p.add_argument("--subjects-per-class", type=int, default=10)
    p.add_argument("--samples-per-subject", type=int, default=40)
    p.add_argument("--noise-exponent", type=float, default=1.0)
    p.add_argument("--theta-amp", type=float, default=1.0, help="class-0 7 Hz amplitude")
    p.add_argument("--alpha-amp", type=float, default=0.3, help="class-1 10 Hz amplitude")

    p = add("train", cmd_train, "train a classifier")
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out")
    p.add_argument("--history")
    p.add_argument("--arch", choices=["toy", "rscnn"], default="toy")
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--weight-decay", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=70)
    p.add_argument("--dropout", type=float, default=0.25)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = add("eval", cmd_eval, "per-sample and per-subject accuracy")
    p.add_argument("--weights")
    p.add_argument("--data")
    p.add_argument("--out")

    p = add("rank", cmd_rank, "rank samples or subjects by a neuron's activation")
    p.add_argument("--weights")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--neuron", type=_neuron, default="1")
    p.add_argument("--outcome", choices=["TP", "TN", "FP", "FN", "all"], default="all")
    p.add_argument("--per-subject", action="store_true")
    p.add_argument("-k", type=int, default=20)

    p = add("am", cmd_am, "activation maximisation")
    p.add_argument("--weights")
    p.add_argument("--out")
    p.add_argument("--activations")
    p.add_argument("--neuron", type=_neuron, default="0")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--tv-weight", type=float, default=1e-3)
    p.add_argument("--l1-weight", type=float, default=1e-4)
    p.add_argument("--jitter", type=int, default=4)
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--fs", type=float, default=128.0, help="sampling rate stamped on the output")

    p = add("deconv", cmd_deconv, "deconvnet reconstructions of convolution filters")
    p.add_argument("--weights")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--layer", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--filter", type=int, default=0)
    g.add_argument("--all", action="store_true")

    p = add("saliency", cmd_saliency, "saliency maps and saliency-masked samples")
    p.add_argument("--weights")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--masked-out")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--subject", type=int)
    p.add_argument("--neuron", type=int, choices=[0, 1], default=1)
    p.add_argument("--quantile", type=float, default=0.30)

    p = add("psd", cmd_psd, "Welch spectra, group CIs and class difference")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--svg")
    p.add_argument("--group-by", choices=["class", "subject", "none"], default="class")
    p.add_argument("--bands", type=_bands, default="")
    p.add_argument("--window", type=int)
    p.add_argument("--overlap", type=float, default=0.5)
    return parser, subs


def _apply_config(parser, subs, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    sp = subs[args.command]
    if args.config:
        try:
            cfg = read_keyvalue(args.config)
        except (OSError, EEGProbeError) as exc:
            sp.error(f"cannot read config: {exc}")
        recorded = cfg.pop("command", args.command)
        if recorded != args.command:
            sp.error(f"config was recorded for '{recorded}', not '{args.command}'")
        dests = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest not in dests or dest in _NOT_RECORDED:
                sp.error(f"unknown config key {key!r}")
            if value == "":
                continue
            if isinstance(dests[dest], argparse._StoreTrueAction):
                defaults[dest] = _bool(value)
            else:
                defaults[dest] = value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [d for d in _REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        sp.error("the following arguments are required: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def _provenance(args) -> dict:
    values = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in _NOT_RECORDED:
            continue
        if key == "neuron" and isinstance(value, tuple):
            value = str(value[1]) if value[0] is None else f"{value[0]}:{value[1]}"
        elif key == "bands":
            value = ",".join(f"{lo!r}:{hi!r}" for lo, hi in value)
        values[key] = value
    return values


def main(argv=None) -> int:
    parser, subs = build_parser()
    args = _apply_config(parser, subs, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (EEGProbeError, OSError, ValueError) as exc:
        print(f"eegprobe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    write_keyvalue(f"{args.out}.provenance", _provenance(args))
    return 0


if __name__ == "__main__":
    sys.exit(main())
