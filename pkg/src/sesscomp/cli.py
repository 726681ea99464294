"""Command-line entry point.

Every subcommand reads one JSON config file. Configs are validated against
a fixed key set (unknown keys are rejected), and every output carries the
SHA-256 digest of the canonical config JSON: text files as a leading
``# config_digest=...`` comment, binary files as a ``<path>.provenance.json``
sidecar. No output embeds timestamps, so rerunning a command with the same
config rewrites identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import evaluation, qstack, scorer, synthgen
from . import session_net as snet
from .corpus import load_corpus, save_corpus
from .errors import ConfigError

_GRID_NOTE = "list of session weights; defaults to 0.00..1.00 in steps of 0.01"


def canonical_json(obj) -> str:
    """Minimal separators, sorted keys, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_digest(config: dict) -> str:
    """SHA-256 hex digest of the canonical config JSON."""
    return hashlib.sha256(canonical_json(config).encode("ascii")).hexdigest()


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config


_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "array": lambda v: isinstance(v, list),
}


def _check_keys(config: dict, command: str, required: dict, optional: dict) -> None:
    allowed = {**required, **optional}
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ConfigError(
            f"{command}: unknown config keys {unknown}; "
            f"allowed keys are {sorted(allowed)}"
        )
    missing = sorted(set(required) - set(config))
    if missing:
        raise ConfigError(f"{command}: missing required config keys {missing}")
    for key, value in config.items():
        kind = allowed[key]
        if not _TYPE_CHECKS[kind](value):
            raise ConfigError(f"{command}: key {key!r} must be a JSON {kind}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_provenance(out_path, command: str, digest: str) -> None:
    body = canonical_json({"command": command, "config_digest": digest})
    with open(str(out_path) + ".provenance.json", "w", encoding="utf-8", newline="\n") as f:
        f.write(body + "\n")


def _write_text(path, digest: str, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# config_digest={digest}\n")
        for line in lines:
            f.write(line + "\n")


def _write_loss_log(path, digest: str, losses) -> None:
    _write_text(path, digest, (f"{i + 1}\t{_fmt(v)}" for i, v in enumerate(losses)))


def _cmd_synth_gen(config: dict) -> int:
    _check_keys(
        config, "synth-gen",
        required={
            "num_speakers": "integer", "sessions_per_speaker": "integer",
            "utterances_per_session": "integer", "dimension": "integer",
            "seed": "integer", "corpus_out": "string",
        },
        optional={
            "shared_session_groups": "integer", "windows_per_utterance": "integer",
            "alpha": "number", "beta": "number", "gamma": "number",
            "sigma": "number", "noise_seed": "integer",
            "ground_truth_out": "string",
        },
    )
    digest = config_digest(config)
    fields = {
        k: v for k, v in config.items()
        if k not in ("corpus_out", "ground_truth_out")
    }
    for k in ("alpha", "beta", "gamma", "sigma"):
        if k in fields:
            fields[k] = float(fields[k])
    try:
        synth = synthgen.SynthConfig(**fields)
        synth.validate()
    except ValueError as exc:
        raise ConfigError(f"synth-gen: {exc}") from exc
    corpus, gt = synthgen.generate(synth)
    save_corpus(corpus, config["corpus_out"])
    _write_provenance(config["corpus_out"], "synth-gen", digest)
    if "ground_truth_out" in config:
        synthgen.save_ground_truth(gt, config["ground_truth_out"])
        _write_provenance(config["ground_truth_out"], "synth-gen", digest)
    print(f"wrote {config['corpus_out']} ({len(corpus)} utterances)")
    return 0


def _cmd_train_session(config: dict) -> int:
    _check_keys(
        config, "train-session",
        required={"corpus": "string", "checkpoint_out": "string", "seed": "integer"},
        optional={
            "session_dim": "integer", "hidden_dim": "integer",
            "num_blocks": "integer", "dropout_rate": "number",
            "steps": "integer", "speakers_per_batch": "integer",
            "learning_rate": "number", "loss_log_out": "string",
        },
    )
    digest = config_digest(config)
    fields = {
        k: v for k, v in config.items()
        if k not in ("corpus", "checkpoint_out", "loss_log_out")
    }
    for k in ("dropout_rate", "learning_rate"):
        if k in fields:
            fields[k] = float(fields[k])
    try:
        train_config = snet.SessionNetConfig(**fields)
        train_config.validate()
    except ValueError as exc:
        raise ConfigError(f"train-session: {exc}") from exc
    corpus = load_corpus(config["corpus"])
    net, losses = snet.train(corpus, train_config)
    net.save(config["checkpoint_out"])
    _write_provenance(config["checkpoint_out"], "train-session", digest)
    if "loss_log_out" in config:
        _write_loss_log(config["loss_log_out"], digest, losses)
    print(f"wrote {config['checkpoint_out']} (final loss {_fmt(losses[-1])})")
    return 0


def _load_scoring_inputs(config: dict):
    corpus = load_corpus(config["corpus"])
    net = snet.SessionNet.load(config["checkpoint"])
    protocol = evaluation.load_protocol(config["trials"])
    return corpus, net, protocol


def _cmd_score(config: dict) -> int:
    _check_keys(
        config, "score",
        required={
            "corpus": "string", "checkpoint": "string", "trials": "string",
            "weight": "number", "scores_out": "string",
        },
        optional={},
    )
    digest = config_digest(config)
    w = float(config["weight"])
    if w < 0:
        raise ConfigError("score: weight must be >= 0")
    corpus, net, protocol = _load_scoring_inputs(config)
    scored = scorer.score_protocol(corpus, net, protocol, w)
    scorer.save_scores(
        config["scores_out"], scored, header_lines=(f"config_digest={digest}",)
    )
    print(f"wrote {config['scores_out']} ({len(scored)} trials)")
    return 0


def _cmd_sweep_w(config: dict) -> int:
    _check_keys(
        config, "sweep-w",
        required={
            "corpus": "string", "checkpoint": "string", "trials": "string",
            "sweep_out": "string",
        },
        optional={"weights": "array"},
    )
    digest = config_digest(config)
    if "weights" in config:
        grid = config["weights"]
        if not all(
            isinstance(w, (int, float)) and not isinstance(w, bool) for w in grid
        ):
            raise ConfigError(f"sweep-w: 'weights' must be a {_GRID_NOTE}")
    else:
        grid = scorer.default_weight_grid()
    corpus, net, protocol = _load_scoring_inputs(config)
    try:
        result = scorer.sweep_weight(protocol, corpus, net, grid)
    except ValueError as exc:
        raise ConfigError(f"sweep-w: {exc}") from exc
    lines = [f"# best_w={_fmt(result.best_w)} best_eer={_fmt(result.best_eer)}"]
    lines.extend(f"{_fmt(w)}\t{_fmt(eer)}" for w, eer in result.points)
    _write_text(config["sweep_out"], digest, lines)
    print(
        f"wrote {config['sweep_out']} "
        f"(best_w {_fmt(result.best_w)}, eer {_fmt(result.best_eer)})"
    )
    return 0


def _load_models(items, command: str) -> list[qstack.ModelContext]:
    if not items:
        raise ConfigError(f"{command}: 'models' must be a non-empty array")
    models = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or set(item) != {"corpus", "checkpoint"}:
            raise ConfigError(
                f"{command}: models[{i}] must be an object with exactly "
                "the keys 'corpus' and 'checkpoint'"
            )
        if not all(isinstance(v, str) for v in item.values()):
            raise ConfigError(f"{command}: models[{i}] paths must be strings")
        models.append(
            qstack.ModelContext(
                corpus=load_corpus(item["corpus"]),
                net=snet.SessionNet.load(item["checkpoint"]),
            )
        )
    return models


def _cmd_train_qstack(config: dict) -> int:
    _check_keys(
        config, "train-qstack",
        required={
            "trials": "string", "models": "array", "checkpoint_out": "string",
            "seed": "integer",
        },
        optional={
            "hidden_dim": "integer", "num_blocks": "integer",
            "dropout_rate": "number", "steps": "integer",
            "examples_per_class": "integer", "learning_rate": "number",
            "loss_log_out": "string", "features_out": "string",
        },
    )
    digest = config_digest(config)
    fields = {
        k: v for k, v in config.items()
        if k in ("hidden_dim", "num_blocks", "dropout_rate", "steps",
                 "examples_per_class", "learning_rate", "seed")
    }
    for k in ("dropout_rate", "learning_rate"):
        if k in fields:
            fields[k] = float(fields[k])
    try:
        train_config = qstack.QstackConfig(**fields)
        train_config.validate()
    except ValueError as exc:
        raise ConfigError(f"train-qstack: {exc}") from exc
    models = _load_models(config["models"], "train-qstack")
    protocol = evaluation.load_protocol(config["trials"])
    features, labels = qstack.build_training_set(models, protocol)
    if "features_out" in config:
        qstack.save_features(config["features_out"], features, labels)
        _write_provenance(config["features_out"], "train-qstack", digest)
    model, losses = qstack.train_qstack(features, labels, train_config)
    model.save(config["checkpoint_out"])
    _write_provenance(config["checkpoint_out"], "train-qstack", digest)
    if "loss_log_out" in config:
        _write_loss_log(config["loss_log_out"], digest, losses)
    print(f"wrote {config['checkpoint_out']} (final loss {_fmt(losses[-1])})")
    return 0


def _evaluate_scores(config: dict):
    scored = scorer.load_scores(config["scores"])
    if not scored:
        raise ConfigError("evaluate: score file holds no trials")
    values = np.array([s.score for s in scored])
    labels = np.array([s.trial.target for s in scored])
    return values, labels


def _evaluate_compensated(config: dict):
    w = float(config["weight"])
    if w < 0:
        raise ConfigError("evaluate: weight must be >= 0")
    corpus, net, protocol = _load_scoring_inputs(config)
    scored = scorer.score_protocol(corpus, net, protocol, w)
    values = np.array([s.score for s in scored])
    labels = np.array([s.trial.target for s in scored])
    return values, labels


def _evaluate_qstack(config: dict):
    model = qstack.QstackModel.load(config["qstack"])
    models = _load_models(config["models"], "evaluate")
    protocol = evaluation.load_protocol(config["trials"])
    values = np.array(qstack.score_trials(model, models, protocol))
    labels = np.array([t.target for t in protocol.trials])
    return values, labels


_EVALUATE_MODES = {
    "scores": (_evaluate_scores, {"scores": "string"}),
    "compensated": (
        _evaluate_compensated,
        {
            "corpus": "string", "checkpoint": "string", "trials": "string",
            "weight": "number",
        },
    ),
    "qstack": (
        _evaluate_qstack,
        {"qstack": "string", "models": "array", "trials": "string"},
    ),
}


def _cmd_evaluate(config: dict) -> int:
    mode = config.get("mode")
    if mode not in _EVALUATE_MODES:
        raise ConfigError(
            f"evaluate: 'mode' must be one of {sorted(_EVALUATE_MODES)}"
        )
    handler, required = _EVALUATE_MODES[mode]
    _check_keys(
        config, f"evaluate[{mode}]",
        required={"mode": "string", **required},
        optional={"result_out": "string", "det_out": "string"},
    )
    digest = config_digest(config)
    values, labels = handler(config)
    eer, threshold = evaluation.compute_eer(values, labels)
    lines = [f"eer\t{_fmt(eer)}", f"threshold\t{_fmt(threshold)}"]
    for line in lines:
        print(line)
    if "result_out" in config:
        _write_text(config["result_out"], digest, lines)
    if "det_out" in config:
        rows = evaluation.det_points(values, labels)
        _write_text(
            config["det_out"], digest,
            (f"{_fmt(t)}\t{_fmt(far)}\t{_fmt(frr)}" for t, far, frr in rows),
        )
    return 0


def _cmd_mix_trials(config: dict) -> int:
    _check_keys(
        config, "mix-trials",
        required={
            "mode": "string", "a": "string", "b": "string",
            "trials_out": "string",
        },
        optional={"name": "string"},
    )
    digest = config_digest(config)
    mode = config["mode"]
    a = evaluation.load_protocol(config["a"])
    b = evaluation.load_protocol(config["b"])
    name = config.get("name")
    if mode == "pos-neg":
        mixed = evaluation.mix_protocols(a, b, name=name)
    elif mode == "union":
        mixed = evaluation.union_protocols(a, b, name=name)
    else:
        raise ConfigError("mix-trials: 'mode' must be 'pos-neg' or 'union'")
    evaluation.save_protocol(
        mixed, config["trials_out"], header_lines=(f"config_digest={digest}",)
    )
    print(
        f"wrote {config['trials_out']} ({mixed.target_count()} target, "
        f"{mixed.nontarget_count()} nontarget)"
    )
    return 0


_COMMANDS = {
    "synth-gen": (_cmd_synth_gen, "generate a synthetic embedding corpus"),
    "train-session": (_cmd_train_session, "train the session network"),
    "score": (_cmd_score, "score trials at a fixed session weight"),
    "sweep-w": (_cmd_sweep_w, "sweep the session weight on a dev protocol"),
    "train-qstack": (_cmd_train_qstack, "train the trial classifier"),
    "evaluate": (_cmd_evaluate, "compute the error rate of a system"),
    "mix-trials": (_cmd_mix_trials, "combine two trial protocols"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sesscomp",
        description="session-variability compensation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler, _ = _COMMANDS[args.command]
    try:
        config = _load_config(args.config)
        return handler(config)
    except Exception as exc:  # surfaced as a one-line diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
