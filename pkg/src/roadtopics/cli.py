"""Pipeline driver: synth -> train-hmm -> quantize -> corpus -> train-hdp
-> predict/eval/export, with versioned artifacts and a reproducibility
manifest per stage."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, evaluate, hdp, predict
from .corpus import Corpus
from .hmm import HmmModel, augment_with_source, em_fit, extract_corpus, init_model
from .quantize import Codebook, build_vocab
from .trips import Trip, WorldConfig, generate_world, parse_trips, sample_trips, serialize_trips

DEFAULTS: dict = {
    "seed": 0,
    "synth": {
        "grid_w": 7,
        "grid_h": 7,
        "spacing": 100.0,
        "n_sources": 4,
        "n_destinations": 4,
        "n_trips": 150,
        "main_prob": 0.8,
        "pos_std": 5.0,
        "heading_std": 0.1,
        "p_dr": 0.1,
        "dr_inflation": 4.0,
    },
    "hmm": {
        "lambda_pos": 50.0,
        "proximity_scale": 200.0,
        "alpha": 0.5,
        "c": 10.0,
        "max_iter": 50,
        "tol": 1e-6,
        "augmented": True,
    },
    "quantize": {"lambda_v": 2.0, "lambda_t": 1.5},
    "hdp": {"gamma": 10.0, "alpha": 0.1, "lambda": 0.5, "iters": 150, "k0": 1},
    "eval": {"ratio": 0.5, "snapshots": 10, "snapshot_stride": 10, "baseline_prior": 0.5, "burn_in": 50, "n_avg": 50},
}


class MissingArtifactError(FileNotFoundError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    cfg = DEFAULTS
    if path:
        with open(path, "rb") as fh:
            cfg = _merge(cfg, tomllib.load(fh))
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out: Path, stage: str, config: dict, artifacts: list[Path]) -> None:
    manifest = {
        "stage": stage,
        "version": __version__,
        "format_version": 1,
        "seed": config["seed"],
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    with open(out / f"manifest_{stage}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)


def _require(out: Path, name: str, producer: str) -> Path:
    p = out / name
    if not p.exists():
        raise MissingArtifactError(f"missing artifact {name}; run `{producer}` first")
    return p


def _load_trips(out: Path) -> list[Trip]:
    trips, rejects = parse_trips(_require(out, "trips.jsonl", "synth"))
    if rejects:
        print(f"warning: {len(rejects)} trips rejected while parsing", file=sys.stderr)
    return trips


def _load_signals(out: Path) -> dict:
    with open(_require(out, "signals.json", "synth"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_synth(config: dict, out: Path) -> list[Path]:
    s = config["synth"]
    wc = WorldConfig(
        grid_w=s["grid_w"],
        grid_h=s["grid_h"],
        spacing=s["spacing"],
        n_sources=s["n_sources"],
        n_destinations=s["n_destinations"],
        main_prob=s["main_prob"],
        pos_std=s["pos_std"],
        heading_std=s["heading_std"],
        p_dr=s["p_dr"],
        dr_inflation=s["dr_inflation"],
    )
    world = generate_world(wc, config["seed"])
    trips, signals, truths = sample_trips(world, s["n_trips"], config["seed"])
    serialize_trips(trips, out / "trips.jsonl")
    with open(out / "signals.json", "w", encoding="utf-8") as fh:
        json.dump(signals, fh, sort_keys=True)
    truth = {
        "world": {
            "node_xy": world.node_xy.tolist(),
            "sources": world.sources,
            "destinations": world.destinations,
            "node_velocity": world.node_velocity.tolist(),
            "node_hour": world.node_hour.tolist(),
        },
        "trips": {
            t.trip_id: {"nodes": list(t.nodes), "source": t.source, "dest": t.dest} for t in truths
        },
    }
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True)
    return [out / "trips.jsonl", out / "signals.json", out / "truth.json"]


def cmd_train_hmm(config: dict, out: Path) -> list[Path]:
    h = config["hmm"]
    trips = _load_trips(out)
    model = init_model(
        trips,
        lambda_pos=h["lambda_pos"],
        proximity_scale=h["proximity_scale"],
        augmented=False,
        alpha=h["alpha"],
        c=h["c"],
    )
    model, trace = em_fit(model, trips, max_iter=h["max_iter"], tol=h["tol"])
    model.save(out / "hmm_plain.json")
    artifacts = [out / "hmm_plain.json"]
    with open(out / "em_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,objective\n")
        for i, v in enumerate(trace, start=1):
            fh.write(f"{i},{v!r}\n")
    artifacts.append(out / "em_trace.csv")
    if h["augmented"]:
        aug = augment_with_source(model, trips)
        aug, _ = em_fit(aug, trips, max_iter=h["max_iter"], tol=h["tol"])
        aug.save(out / "hmm_augmented.json")
        artifacts.append(out / "hmm_augmented.json")
    return artifacts


def cmd_quantize(config: dict, out: Path) -> list[Path]:
    q = config["quantize"]
    signals = _load_signals(out)
    vel = np.concatenate([np.asarray(s["velocity"], dtype=float) for s in signals.values()])
    hour = np.concatenate([np.asarray(s["hour"], dtype=float) for s in signals.values()])
    cb_v, cb_t, vocab = build_vocab(vel, hour, q["lambda_v"], q["lambda_t"])
    (out / "codebook_v.json").write_text(cb_v.to_json())
    (out / "codebook_t.json").write_text(cb_t.to_json())
    print(f"vocabulary: {cb_v.k} velocity bins x {cb_t.k} time bins = {vocab} words")
    return [out / "codebook_v.json", out / "codebook_t.json"]


def _load_model(out: Path, prefer_augmented: bool = True) -> HmmModel:
    if prefer_augmented and (out / "hmm_augmented.json").exists():
        return HmmModel.load(out / "hmm_augmented.json")
    return HmmModel.load(_require(out, "hmm_plain.json", "train-hmm"))


def cmd_corpus(config: dict, out: Path) -> list[Path]:
    trips = _load_trips(out)
    signals = _load_signals(out)
    cb_v = Codebook.from_json(_require(out, "codebook_v.json", "quantize").read_text())
    cb_t = Codebook.from_json(_require(out, "codebook_t.json", "quantize").read_text())
    model = _load_model(out)
    corpus = extract_corpus(model, trips, cb_v, cb_t, signals)
    (out / "corpus.json").write_text(corpus.to_json())
    print(f"corpus: {corpus.n_docs} road documents, {corpus.total_words} words, V={corpus.vocab_size}")
    return [out / "corpus.json"]


def cmd_train_hdp(config: dict, out: Path) -> list[Path]:
    hc = config["hdp"]
    ec = config["eval"]
    corpus = Corpus.from_json(_require(out, "corpus.json", "corpus").read_text())
    hyper = hdp.HdpHyper(gamma=hc["gamma"], alpha=hc["alpha"], lam=hc["lambda"])
    split = evaluate.heldout_split(corpus, ec["ratio"], config["seed"])
    obs_corpus = split.observed_corpus()
    hook = evaluate.heldout_hook(split, hyper)

    snapshots: list[tuple[int, hdp.HdpState]] = []
    stride = ec["snapshot_stride"]
    want = ec["snapshots"]

    state = None
    diag_all = hdp.SamplerDiagnostics()
    start = 1
    iters = hc["iters"]
    while start <= iters:
        chunk = min(stride, iters - start + 1)
        state, diag = hdp.run_sampler(
            obs_corpus,
            hyper,
            chunk,
            config["seed"],
            k0=hc["k0"],
            eval_hook=hook,
            init=state,
            start_iteration=start,
        )
        for row in zip(diag.iterations, diag.k, diag.loglik, diag.accepts_split, diag.accepts_merge, diag.heldout_ll):
            diag_all.append(*row)
        start += chunk
        snapshots.append((start - 1, state.snapshot()))
        snapshots = snapshots[-want:]

    artifacts = []
    hdp.save_checkpoint(state, hyper, str(out / "hdp_state"), iters, config["seed"])
    artifacts += [out / "hdp_state.json", out / "hdp_state.bin"]
    for i, (it, snap) in enumerate(snapshots):
        hdp.save_checkpoint(snap, hyper, str(out / f"hdp_snap_{i:02d}"), it, config["seed"])
        artifacts += [out / f"hdp_snap_{i:02d}.json", out / f"hdp_snap_{i:02d}.bin"]
    diag_all.to_csv(out / "hdp_diagnostics.csv")
    artifacts.append(out / "hdp_diagnostics.csv")
    with open(out / "heldout_split.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "ratio": ec["ratio"],
                "seed": config["seed"],
                "doc_keys": [str(k) for k in split.doc_keys],
                "w_obs": [w.tolist() for w in split.w_obs],
                "w_ho": [w.tolist() for w in split.w_ho],
                "vocab_size": split.vocab_size,
            },
            fh,
            sort_keys=True,
        )
    artifacts.append(out / "heldout_split.json")
    report = hdp.top_words(state)
    with open(out / "topic_report.json", "w", encoding="utf-8") as fh:
        cb_t = Codebook.from_json(_require(out, "codebook_t.json", "quantize").read_text())
        json.dump(
            {
                "topics": [
                    [{"word": w, "v_bin": w // cb_t.k, "t_bin": w % cb_t.k, "prob": p} for w, p in topic]
                    for topic in report
                ]
            },
            fh,
            sort_keys=True,
        )
    artifacts.append(out / "topic_report.json")
    print(f"final K={state.K}")
    return artifacts


def _load_split(out: Path) -> evaluate.HeldoutSplit:
    with open(_require(out, "heldout_split.json", "train-hdp"), "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return evaluate.HeldoutSplit(
        doc_keys=obj["doc_keys"],
        w_obs=[np.asarray(w, dtype=np.int64) for w in obj["w_obs"]],
        w_ho=[np.asarray(w, dtype=np.int64) for w in obj["w_ho"]],
        vocab_size=obj["vocab_size"],
        ratio=obj["ratio"],
        seed=obj["seed"],
    )


def _load_snapshots(out: Path) -> tuple[list[hdp.HdpState], hdp.HdpHyper]:
    stems = sorted(out.glob("hdp_snap_*.json"))
    if not stems:
        raise MissingArtifactError("missing artifact hdp_snap_*.json; run `train-hdp` first")
    states = []
    hyper = None
    for stem in stems:
        state, hyper, _, _ = hdp.load_checkpoint(str(stem)[: -len(".json")])
        states.append(state)
    return states, hyper


def cmd_eval(config: dict, out: Path) -> list[Path]:
    ec = config["eval"]
    split = _load_split(out)
    states, hyper = _load_snapshots(out)
    hdp_score = evaluate.hdp_predictive(
        states, split, hyper, burn_in=ec["burn_in"], n_avg=ec["n_avg"], seed=config["seed"]
    )
    base_score = evaluate.baseline_predictive(split, prior=ec["baseline_prior"])
    evaluate.scores_csv(out / "scores.csv", split, hdp_score, base_score)
    summary = {
        "avg_log_pred_hdp": hdp_score.avg_log_pred,
        "avg_log_pred_baseline": base_score.avg_log_pred,
        "n_docs": split.n_docs,
        "ratio": split.ratio,
    }
    with open(out / "eval_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    print(json.dumps(summary, sort_keys=True))
    return [out / "scores.csv", out / "eval_summary.json"]


def _state_point(model: HmmModel, i: int) -> list[float]:
    return [float(v) for v in model.emissions[model.emission_of[i]].mu_r]


def cmd_predict_route(config: dict, out: Path, from_state: int | None, to_state: int | None) -> list[Path]:
    model = _load_model(out)
    if from_state is None:
        from_state = int(model.source_states[0])
    if to_state is None:
        table = predict.absorption_table(model)
        to_state = int(table.dest_states[int(np.argmax(table.a[from_state]))])
    route = predict.most_likely_route(model, from_state, to_state)
    geo = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [_state_point(model, i) for i in route.path]},
                "properties": {
                    "from_state": from_state,
                    "to_state": to_state,
                    "log_prob": route.log_prob,
                    "states": [int(i) for i in route.path],
                },
            }
        ],
    }
    with open(out / "route.geojson", "w", encoding="utf-8") as fh:
        json.dump(geo, fh, sort_keys=True)
    print(f"route {from_state} -> {to_state}: {len(route.path)} states, log_prob {route.log_prob:.3f}")
    return [out / "route.geojson"]


def cmd_predict_dest(config: dict, out: Path, trip_id: str | None, prefix: float) -> list[Path]:
    model = _load_model(out)
    trips = _load_trips(out)
    trip = trips[0] if trip_id is None else next(t for t in trips if t.id == trip_id)
    n = max(1, int(round(prefix * len(trip.obs))))
    sliced = Trip(id=trip.id, obs=trip.obs[:n])
    table = predict.absorption_table(model)
    states, probs, residual = predict.track_destinations(model, sliced.arrays(), table)
    with open(out / "dest_track.csv", "w", encoding="utf-8") as fh:
        fh.write("timestep,destination_id,probability\n")
        for t in range(len(states)):
            for j, d in enumerate(table.dest_states):
                fh.write(f"{t},{int(d)},{probs[t, j]!r}\n")
            fh.write(f"{t},residual,{residual[t]!r}\n")
    return [out / "dest_track.csv"]


def cmd_export(config: dict, out: Path) -> list[Path]:
    model = _load_model(out)
    table = predict.absorption_table(model)
    dest_map = predict.most_likely_destination_per_road(model, table)
    corpus = Corpus.from_json(_require(out, "corpus.json", "corpus").read_text())
    state, hyper, _, _ = hdp.load_checkpoint(str(_require(out, "hdp_state.json", "train-hdp"))[: -len(".json")])
    cb_t = Codebook.from_json(_require(out, "codebook_t.json", "quantize").read_text())
    key_to_doc = {k: j for j, k in enumerate(corpus.doc_keys)}

    features = []
    for i in range(model.n_states):
        st = model.states[i]
        if st.kind != "road":
            continue
        props = {
            "state": i,
            "road": st.idx,
            "source": st.src,
            "most_likely_destination": dest_map[i],
            "residual": float(table.residual[i]),
        }
        doc = key_to_doc.get(st.idx)
        if doc is not None:
            ml = evaluate.ml_marginals(state, cb_t.k, doc)
            props["ml_v_bin"] = ml.v_bin
            props["ml_t_bin"] = ml.t_bin
            if len(corpus.docs[doc]) > 0:
                emp = evaluate.empirical_marginals(corpus, doc, cb_t.k)
                props["emp_v_bin"] = emp.v_bin
                props["emp_t_bin"] = emp.t_bin
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": _state_point(model, i)},
                "properties": props,
            }
        )
    geo = {"type": "FeatureCollection", "features": features}
    with open(out / "map.geojson", "w", encoding="utf-8") as fh:
        json.dump(geo, fh, sort_keys=True)
    return [out / "map.geojson"]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="roadtopics", description=__doc__)
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--threads", type=int, default=1, help="parallelism bound (module operations)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "train-hmm", "quantize", "corpus", "train-hdp", "eval", "export"):
        sub.add_parser(name)
    pr = sub.add_parser("predict-route")
    pr.add_argument("--from-state", type=int, default=None)
    pr.add_argument("--to-state", type=int, default=None)
    pd = sub.add_parser("predict-dest")
    pd.add_argument("--trip-id", default=None)
    pd.add_argument("--prefix", type=float, default=1.0)

    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, tomllib.TOMLDecodeError) as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "synth":
            artifacts = cmd_synth(config, out)
        elif args.command == "train-hmm":
            artifacts = cmd_train_hmm(config, out)
        elif args.command == "quantize":
            artifacts = cmd_quantize(config, out)
        elif args.command == "corpus":
            artifacts = cmd_corpus(config, out)
        elif args.command == "train-hdp":
            artifacts = cmd_train_hdp(config, out)
        elif args.command == "eval":
            artifacts = cmd_eval(config, out)
        elif args.command == "predict-route":
            artifacts = cmd_predict_route(config, out, args.from_state, args.to_state)
        elif args.command == "predict-dest":
            artifacts = cmd_predict_dest(config, out, args.trip_id, args.prefix)
        elif args.command == "export":
            artifacts = cmd_export(config, out)
        else:  # pragma: no cover
            raise AssertionError(args.command)
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    _write_manifest(out, args.command, config, artifacts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
