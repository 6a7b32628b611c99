"""Operator command line: synth, train, validate, serve, replay,
designspace, metrics, and config dump."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import socket
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_udp_sink
from .design_space import (
    config_to_dict,
    describe,
    index_to_config,
    total_combinations,
)
from .features_ml import (
    SamRating,
    dataset_axis,
    evaluate,
    read_dataset_csv,
    save_models,
    write_dataset_csv,
)
from .report import write_cv_outputs, write_metrics_outputs
from .server import create_app
from .session_engine import (
    SessionEngine,
    TrialRecord,
    compute_metrics,
    fit_models,
    record_from_dict,
)
from .signal_core import (
    ChannelMontage,
    EegEpoch,
    default_montage,
    read_replay_csv,
)
from .stream_gateway import (
    IngestServer,
    LineIngestor,
    ReplayStream,
    SampleMessage,
    UdpSink,
    encode_sample,
)
from .synth_eeg import (
    SynthConfig,
    balanced_label_sequence,
    generate_session,
    read_labels,
    write_session,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectloop",
        description="Real-time affective feedback engine for interactive design",
        allow_abbrev=False)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="RNG seed override")
    parser.add_argument("--port-http", type=int, dest="port_http")
    parser.add_argument("--port-ingest", type=int, dest="port_ingest")
    parser.add_argument("--udp-sink", dest="udp_sink", metavar="HOST:PORT")
    parser.add_argument("--out", dest="out_dir", metavar="DIR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic session")
    p.add_argument("--stimuli", type=int, default=49)
    p.add_argument("--duration", type=float, default=10.0,
                   help="seconds per stimulus")
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--prefix", default="synth")

    p = sub.add_parser("train", help="fit models from a replay and its labels")
    p.add_argument("--replay", required=True)
    p.add_argument("--labels", required=True)

    p = sub.add_parser("validate", help="cross-validate a feature dataset CSV")
    p.add_argument("--dataset", required=True)

    sub.add_parser("serve", help="run the session engine with HTTP console API")

    p = sub.add_parser("replay", help="stream a replay CSV to an ingest port")
    p.add_argument("--file", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--rate", default="1.0", help="playback speed, or 'inf'")

    p = sub.add_parser("designspace", help="inspect the design space")
    p.add_argument("action", choices=["count", "show", "sample"])
    p.add_argument("value", nargs="?", type=int,
                   help="index for show, count for sample")

    p = sub.add_parser("metrics", help="compute session metrics from a log")
    p.add_argument("session_log")

    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=["dump"])

    return parser


def _fail(message: str) -> int:
    print(json.dumps({"error": message}), file=sys.stderr)
    return 1


def _load_epoch(replay_path: str, sample_rate: float) -> EegEpoch:
    times, samples, skipped = read_replay_csv(replay_path)
    if len(times) == 0:
        raise ValueError(f"replay file {replay_path} holds no usable rows")
    if skipped:
        print(f"note: skipped {skipped} malformed replay rows", file=sys.stderr)
    return EegEpoch(float(times[0]), sample_rate, samples.T)


def _montage(config: RunConfig) -> ChannelMontage:
    if config.montage_path:
        return ChannelMontage.from_csv(config.montage_path)
    return default_montage()


def cmd_synth(args, config: RunConfig) -> int:
    labels = balanced_label_sequence(args.stimuli)
    session = generate_session(
        labels, duration_s=args.duration,
        config=SynthConfig(sample_rate=config.sample_rate,
                           strength=args.strength, seed=config.seed))
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, f"{args.prefix}.csv")
    labels_path = os.path.join(config.out_dir, f"{args.prefix}_labels.json")
    write_session(csv_path, labels_path, session)
    print(json.dumps({"replay": csv_path, "labels": labels_path,
                      "stimuli": args.stimuli, "duration_s": args.duration,
                      "strength": args.strength, "seed": config.seed}))
    return 0


def _records_from_labels(labels_doc: dict) -> list[TrialRecord]:
    return [TrialRecord(kind="TrainingStimulus", t_event=st.start,
                        t_response=st.start + st.duration,
                        stimulus_id=st.stimulus_id, capture_start=st.start,
                        capture_duration=st.duration,
                        sam=SamRating(arousal=st.sam_arousal,
                                      valence=st.sam_valence))
            for st in labels_doc["stimuli"]]


def cmd_train(args, config: RunConfig) -> int:
    labels_doc = read_labels(args.labels)
    if labels_doc["sample_rate"] != config.sample_rate:
        print(f"note: using recorded sample rate {labels_doc['sample_rate']} Hz",
              file=sys.stderr)
    sample_rate = labels_doc["sample_rate"]
    epoch = _load_epoch(args.replay, sample_rate)
    records = _records_from_labels(labels_doc)
    pair = fit_models(records, epoch, _montage(config),
                      k_features=config.k_features, C=config.C,
                      n_folds=config.n_folds, window_s=config.window_s,
                      overlap_s=config.overlap_s, bands=config.bands)
    os.makedirs(config.out_dir, exist_ok=True)
    models_path = os.path.join(config.out_dir, "models.json")
    reports = {"arousal": pair.arousal_report, "valence": pair.valence_report}
    save_models(models_path, {"arousal": pair.arousal, "valence": pair.valence},
                reports)
    dataset_path = os.path.join(config.out_dir, "dataset.csv")
    write_dataset_csv(dataset_path, pair.dataset)
    written = write_cv_outputs(reports, config.out_dir)
    for axis in ("arousal", "valence"):
        print(f"== {axis} ==")
        print(reports[axis].format_table())
    print(json.dumps({"models": models_path, "dataset": dataset_path,
                      "reports": written,
                      "mean_accuracy": {a: reports[a].mean_accuracy
                                        for a in reports}}))
    return 0


def cmd_validate(args, config: RunConfig) -> int:
    rows = read_dataset_csv(args.dataset)
    if not rows:
        raise ValueError("empty dataset")
    reports = {axis: evaluate(dataset_axis(rows, axis),
                              k_features=config.k_features, C=config.C,
                              n_folds=config.n_folds)
               for axis in ("arousal", "valence")}
    written = write_cv_outputs(reports, config.out_dir)
    for axis in ("arousal", "valence"):
        print(f"== {axis} ==")
        print(reports[axis].format_table())
    print(json.dumps({"reports": written,
                      "mean_accuracy": {a: reports[a].mean_accuracy
                                        for a in reports}}))
    return 0


@dataclasses.dataclass
class ServeRuntime:
    """Everything `serve` wires together, exposed for tests and shutdown."""

    engine: SessionEngine
    app: object
    ingest_server: IngestServer
    udp: UdpSink | None

    def close(self) -> None:
        self.engine.stop()
        self.ingest_server.close()
        if self.udp is not None:
            self.udp.close()


def make_runtime(config: RunConfig) -> ServeRuntime:
    ingestor = LineIngestor()
    ingest_server = IngestServer(ingestor, host=config.host,
                                 port=config.port_ingest)
    udp = None
    sinks = []
    if config.udp_sink:
        udp = UdpSink(*parse_udp_sink(config.udp_sink))
        sinks.append(udp)
    os.makedirs(config.out_dir, exist_ok=True)
    log_path = config.log_path or os.path.join(config.out_dir,
                                               "session_log.jsonl")
    engine = SessionEngine(montage=_montage(config), sinks=sinks,
                           ingestor=ingestor, sample_rate=config.sample_rate,
                           log_path=log_path, k_features=config.k_features,
                           C=config.C)
    engine.start()
    app = create_app(engine, static_dir=config.static_dir)
    return ServeRuntime(engine, app, ingest_server, udp)


def cmd_serve(args, config: RunConfig) -> int:
    import uvicorn

    runtime = make_runtime(config)
    print(json.dumps({"http": f"http://{config.host}:{config.port_http}",
                      "ingest_tcp": runtime.ingest_server.port,
                      "udp_sink": config.udp_sink,
                      "session_log": runtime.engine.log_path}))
    try:
        uvicorn.run(runtime.app, host=config.host, port=config.port_http,
                    log_level="warning")
    finally:
        runtime.close()
    return 0


def cmd_replay(args, config: RunConfig) -> int:
    rate = math.inf if args.rate == "inf" else float(args.rate)
    stream = ReplayStream(args.file, rate)
    host = args.host or config.host
    port = args.port if args.port is not None else config.port_ingest
    sent = 0
    with socket.create_connection((host, port), timeout=10.0) as sock:
        for frame in stream:
            line = encode_sample(SampleMessage(frame.timestamp,
                                               tuple(frame.samples)))
            sock.sendall(line.encode() + b"\n")
            sent += 1
    print(json.dumps({"sent": sent, "skipped": stream.skipped,
                      "rate": args.rate}))
    return 0


def cmd_designspace(args, config: RunConfig) -> int:
    if args.action == "count":
        print(total_combinations())
        return 0
    if args.action == "show":
        if args.value is None:
            raise ValueError("show needs a design index")
        print(json.dumps(_design_line(args.value)))
        return 0
    n = args.value if args.value is not None else 5
    rng = np.random.default_rng(config.seed)
    total = total_combinations()
    for _ in range(n):
        print(json.dumps(_design_line(int(rng.integers(total)))))
    return 0


def _design_line(index: int) -> dict:
    design = index_to_config(index)
    labels = describe(design)
    labels.pop("index")
    return {"index": index, "config": config_to_dict(design), "labels": labels}


def cmd_metrics(args, config: RunConfig) -> int:
    records = []
    with open(args.session_log) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    metrics = compute_metrics(records)
    write_metrics_outputs(metrics, config.out_dir)
    print(json.dumps(metrics.to_dict(), sort_keys=True, indent=1))
    return 0


def cmd_config(args, config: RunConfig) -> int:
    print(json.dumps(config.to_dict(), sort_keys=True, indent=1))
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "validate": cmd_validate,
    "serve": cmd_serve,
    "replay": cmd_replay,
    "designspace": cmd_designspace,
    "metrics": cmd_metrics,
    "config": cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail("invalid arguments; see usage above")
    try:
        config = load_config(args.config, overrides={
            "seed": args.seed, "port_http": args.port_http,
            "port_ingest": args.port_ingest, "udp_sink": args.udp_sink,
            "out_dir": args.out_dir})
    except ConfigError as exc:
        return _fail(str(exc))
    try:
        return _HANDLERS[args.command](args, config)
    except FileNotFoundError as exc:
        return _fail(f"missing file: {exc.filename or exc}")
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
