"""Scenario drivers: wire the modules together and emit metrics.

Each driver consumes a validated parameter block plus the master seed and
returns its metrics rows, a JSON-able summary, and any extra text files to
persist. All randomness is drawn from streams labeled under the master seed,
so a full run and a standalone run of the same module produce identical rows.
File writing happens only in run_scenario, after the driver finished.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np

from .. import rng as rnglib
from ..cc_adaptive import (
    Bucketizer,
    CCStrategy,
    OnlineAdapter,
    ShiftThresholds,
    observe,
    window_reward,
)
from ..engine import CCAction, Engine, WorkloadSpec, compute_checksum
from ..gate import (
    ExpertSet,
    GatingNet,
    Schema,
    UnsupportedQuery,
    encode_query,
    gate,
    parse_predicates,
    sliced_predict,
)
from ..model_select import (
    ModelSpace,
    ProxyScorer,
    Trainer,
    oracle_regret,
    select,
)
from ..plan_opt import (
    Catalog,
    MutationGrid,
    Query,
    RelStats,
    SelectorState,
    edge_key,
    feedback,
    gen_candidates,
    select_plan,
    simulate_latency,
    true_cost,
)
from ..recovery import EnclaveSim, RedoLog
from .buffer import BufferClosed, CircularBuffer
from .config import BLOCK_OF, ConfigError, DEFAULT_WORKLOAD, ScenarioConfig
from .metrics import MetricsWriter, write_combined_csv, write_summary


def run_select(params: dict, seed: int):
    writer = MetricsWriter("select")
    space = ModelSpace(tuple(params["space_dims"]),
                       seed=rnglib.child_seed(seed, "select", "space"),
                       tau_range=(params["tau_min"], params["tau_max"]))
    scorer = ProxyScorer(space, rho=params["rho"], sigma=params["sigma"],
                         cost=params["score_cost"])
    runs = []
    slo_met = True
    for i in range(params["runs"]):
        feed = CircularBuffer(params["buffer_capacity"])
        producer = threading.Thread(target=_produce_batches, args=(feed,), daemon=True)
        producer.start()
        trainer = Trainer(space, cost_per_epoch=params["epoch_cost"],
                          noise_sigma=params["trainer_noise"],
                          data_source=feed.consume)
        try:
            result = select(space, scorer, trainer, params["budget"],
                            eta=params["eta"],
                            filter_fraction=params["filter_fraction"],
                            initial_epochs=params["initial_epochs"],
                            workers=params["workers"],
                            seed=rnglib.child_seed(seed, "select", "run", i))
        finally:
            feed.close()
            producer.join(timeout=5.0)

        run = {
            "genome_id": result.genome.genome_id,
            "genome": list(result.genome.params),
            "elapsed": result.elapsed,
            "filter_cost": result.filter_cost,
            "refine_cost": result.refine_cost,
            "scored": result.scored_count,
            "epochs": result.epochs_charged,
            "survivors": result.survivor_history,
            "batches_fed": trainer.batches_consumed,
        }
        if params["oracle"]:
            run["regret"] = oracle_regret(space, result.genome)
        slo_met = slo_met and result.elapsed <= params["budget"]
        runs.append(run)
        writer.add(i, "elapsed", result.elapsed)
        writer.add(i, "filter_cost", result.filter_cost)
        writer.add(i, "refine_cost", result.refine_cost)
        writer.add(i, "genome_id", result.genome.genome_id)
        if params["oracle"]:
            writer.add(i, "regret", run["regret"])

    summary = {
        "budget": params["budget"],
        "runs": runs,
        "slo_met_all": slo_met,
    }
    if params["oracle"] and runs:
        summary["mean_regret"] = sum(r["regret"] for r in runs) / len(runs)
    return writer, summary, {}


def _produce_batches(feed: CircularBuffer) -> None:
    batch = 0
    while True:
        try:
            feed.produce(batch)
        except BufferClosed:
            return
        batch += 1


def _strategy_by_name(name: str, buckets: Bucketizer) -> CCStrategy:
    if name == "prescribed":
        return CCStrategy.prescribed(buckets)
    if name == "all_lock":
        return CCStrategy.constant(CCAction.LOCK_IMMEDIATE, buckets)
    return CCStrategy.constant(CCAction.OPTIMISTIC_NO_LOCK, buckets)


def run_cc_sim(params: dict, seed: int):
    writer = MetricsWriter("cc-sim")
    buckets = Bucketizer(params["buckets"], params["contention_max"],
                         params["wait_max"])

    def engine_factory():
        return Engine(max_workers=params["workers"],
                      hot_key_count=params["hot_keys"],
                      lock_overhead=params["lock_overhead"],
                      abort_cost=params["abort_cost"])

    adapter = OnlineAdapter(
        strategy=_strategy_by_name(params["initial_strategy"], buckets),
        thresholds=ShiftThresholds(**params["thresholds"]),
        pop_size=params["pop_size"],
        cells_to_flip=params["mutate_cells"],
        refine_rounds=params["refine_rounds"],
        abort_penalty=params["abort_penalty"],
        probe_duration=params["probe_ticks"],
        seed=rnglib.child_seed(seed, "cc", "adapt"),
        engine_factory=engine_factory,
        reuse_live_reward=params["reuse_live_reward"],
        cooldown_windows=params["cooldown_windows"],
    )
    engine = engine_factory()

    adaptations = []
    window_index = 0
    phase_throughput = []
    for phase_no, phase in enumerate(params["phases"]):
        workload_cfg = dict(DEFAULT_WORKLOAD, **(phase.get("workload") or {}))
        throughputs = []
        for _ in range(phase["windows"]):
            spec = WorkloadSpec(seed=rnglib.child_seed(seed, "cc", "window",
                                                       window_index),
                                **workload_cfg)
            policy = adapter.next_policy()
            stats = engine.run_window(spec, policy, params["window_ticks"])
            state = observe(stats, params["window_ticks"])
            reward = window_reward(stats, params["abort_penalty"])
            throughputs.append(state.throughput)

            writer.add(window_index, "throughput", state.throughput)
            writer.add(window_index, "avg_lock_wait", state.avg_lock_wait)
            writer.add(window_index, "abort_rate", state.abort_rate)
            writer.add(window_index, "contention_index", state.contention_index)
            writer.add(window_index, "reward", reward)

            event = adapter.observe_window(stats, params["window_ticks"], spec)
            if event is not None:
                writer.add(window_index, "adaptation_probes", event.probe_windows)
                adaptations.append({"window": window_index,
                                    "probe_windows": event.probe_windows})
            window_index += 1
        phase_throughput.append({
            "phase": phase_no,
            "windows": phase["windows"],
            "mean_throughput": (sum(throughputs) / len(throughputs)
                                if throughputs else 0.0),
        })

    summary = {
        "windows": window_index,
        "adaptations": adaptations,
        "phases": phase_throughput,
    }
    return writer, summary, {}


def run_recover_demo(params: dict, seed: int):
    writer = MetricsWriter("recover-demo")
    enclave = EnclaveSim(seed=rnglib.child_seed(seed, "recover", "enclave"))
    log = RedoLog(enclave, anchor_every=params["anchor_every"])
    engine = Engine(log=log, max_workers=params["workers"])

    for w in range(params["windows"]):
        spec = WorkloadSpec(seed=rnglib.child_seed(seed, "recover", "window", w),
                            **params["workload"])
        engine.run_window(spec, lambda kind, heat: CCAction.LOCK_IMMEDIATE,
                          params["window_ticks"])

    written = sorted(engine.store.records)
    gen = rnglib.derive(seed, "recover", "tamper")
    count = min(params["tamper_keys"], len(written))
    victims = [written[int(i)] for i in
               gen.choice(len(written), size=count, replace=False)] if count else []

    repairs = []
    max_replay = 0
    for i, key in enumerate(sorted(victims)):
        kind = ("value", "rollback", "checksum")[i % 3]
        _inject_tamper(engine, log, key, kind)
        detected = log.detect_tamper(key, engine.store.read(key))
        restored = log.recover(key)
        replay = log.last_replay_count
        engine.store.records[key] = restored
        clean = not log.detect_tamper(key, engine.store.read(key))
        max_replay = max(max_replay, replay)

        writer.add(i, "tamper_detected", detected)
        writer.add(i, "replay_length", replay)
        writer.add(i, "repaired", clean)
        repairs.append({"key": key, "kind": kind, "detected": detected,
                        "replay_length": replay, "repaired": clean})

    log_text = log.to_text()
    reloaded = RedoLog.from_text(log_text, enclave)
    verified = reloaded.verify_log()
    writer.add(len(repairs), "log_verified", verified)

    summary = {
        "anchor_every": params["anchor_every"],
        "log_records": len(log.records),
        "keys_tampered": len(repairs),
        "repairs": repairs,
        "all_detected": all(r["detected"] for r in repairs),
        "all_repaired": all(r["repaired"] for r in repairs),
        "max_replay_length": max_replay,
        "replay_bound_held": max_replay <= params["anchor_every"],
        "log_verified": verified,
    }
    return writer, summary, {"redo_log.txt": log_text}


def _inject_tamper(engine: Engine, log: RedoLog, key: str, kind: str) -> None:
    record = engine.store.read(key)
    if kind == "value":
        engine.store.tamper(key, value=record.value + 1)
    elif kind == "rollback":
        old_version = max(0, record.version - 1)
        old_value = 0
        for rec in log.records:
            if getattr(rec, "key", None) == key and getattr(rec, "mod_index", None) == old_version:
                old_value = rec.new_value
                break
        engine.store.tamper(key, value=old_value, version=old_version,
                            checksum=compute_checksum(key, old_value, old_version))
    else:
        flipped = ("0" if record.checksum[0] != "0" else "1") + record.checksum[1:]
        engine.store.tamper(key, checksum=flipped)


def _build_catalog(cfg: dict) -> Catalog:
    relations = {name: RelStats(stats["true_rows"], stats["est_rows"])
                 for name, stats in cfg["relations"].items()}
    sels = {}
    for entry in cfg.get("selectivities", []):
        a, b = entry["relations"]
        sels[edge_key(a, b)] = (entry["true"], entry["est"])
    return Catalog(relations, sels)


def run_optd(params: dict, seed: int):
    writer = MetricsWriter("optd")
    catalog = _build_catalog(params["catalog"])
    query = Query(tuple(params["query"]["relations"]),
                  tuple(tuple(j) for j in params["query"].get("joins", [])))
    grid = MutationGrid(tuple(float(f) for f in params["factors"]))
    candidates = gen_candidates(query, catalog, params["n_plans"], grid,
                                seed=rnglib.child_seed(seed, "optd", "mutate"))
    plan_ids = {plan.key(): i for i, plan in enumerate(candidates)}
    costs = [true_cost(plan, catalog) for plan in candidates]
    best_cost = min(costs)
    best_id = costs.index(best_cost)

    state = SelectorState(explore_weight=params["explore_weight"])
    lat_gen = rnglib.derive(seed, "optd", "latency")
    chosen_ids = []
    for episode in range(params["episodes"]):
        plan = select_plan(query.template_id, candidates, state)
        observed = simulate_latency(plan, catalog, lat_gen,
                                    noise_frac=params["latency_noise"])
        feedback(query.template_id, plan, observed, state)
        plan_id = plan_ids[plan.key()]
        chosen_ids.append(plan_id)
        writer.add(episode, "plan_id", plan_id)
        writer.add(episode, "latency", observed)
        writer.add(episode, "regret", costs[plan_id] - best_cost)

    tail = chosen_ids[-100:]
    summary = {
        "template": query.template_id,
        "candidates": len(candidates),
        "true_costs": costs,
        "best_plan_id": best_id,
        "episodes": params["episodes"],
        "tail_best_fraction": (tail.count(best_id) / len(tail)) if tail else 0.0,
        "pulls": {str(plan_ids[k]): row.pulls
                  for k, row in state.template(query.template_id).items()},
    }
    return writer, summary, {}


def run_gate(params: dict, seed: int):
    writer = MetricsWriter("gate")
    if params.get("schema_file"):
        import yaml

        with open(params["schema_file"]) as fh:
            schema_data = yaml.safe_load(fh)
        schema = Schema.from_dict(schema_data)
    else:
        schema = Schema.from_dict(params["schema"])

    if params.get("net_file"):
        net = GatingNet.load(params["net_file"])
        if net.expected_attrs() != schema.n_attrs:
            raise ConfigError("net file does not match the schema width")
    else:
        net = GatingNet.random(schema, params["n_experts"],
                               embed_dim=params["embed_dim"],
                               hidden_dim=params["hidden_dim"],
                               k_max=params["k_max"],
                               threshold=params["threshold"],
                               seed=rnglib.child_seed(seed, "gate", "net"))

    try:
        pairs = parse_predicates(params["predicate"])
        encoding = encode_query(pairs, schema)
    except UnsupportedQuery as exc:
        raise ConfigError(f"bad predicate: {exc}") from None

    weights = gate(encoding, net)
    features = np.asarray(params["features"], dtype=float)
    experts = ExpertSet.random_linear(net.n_experts, features.size,
                                      seed=rnglib.child_seed(seed, "gate", "experts"))
    prediction = sliced_predict(weights, experts, features)
    dense = sum(w * experts.experts[i].evaluate(features)
                for i, w in enumerate(weights))

    for i, w in enumerate(weights):
        writer.add(i, "gate_weight", float(w))
    writer.add(len(weights), "prediction", float(prediction))

    summary = {
        "predicate": params["predicate"],
        "encoding": [int(t) for t in encoding],
        "weights": [float(w) for w in weights],
        "active_experts": [i for i, w in enumerate(weights) if w > 0],
        "prediction": float(prediction),
        "dense_matches": bool(abs(prediction - dense) <= 1e-9),
        "eval_counts": list(experts.eval_counts),
    }
    return writer, summary, {}


DRIVERS = {
    "select": run_select,
    "cc-sim": run_cc_sim,
    "recover-demo": run_recover_demo,
    "optd": run_optd,
    "gate": run_gate,
}

FULL_ORDER = ("select", "cc-sim", "recover-demo", "optd", "gate")


def run_scenario(config: ScenarioConfig, out_dir) -> dict:
    """Dispatch to the named driver(s) and persist metrics under out_dir."""
    out = Path(out_dir)
    if config.scenario == "full":
        writers, sections, extras = [], {}, {}
        for name in FULL_ORDER:
            writer, summary, files = DRIVERS[name](
                config.full_params[BLOCK_OF[name]], config.seed)
            writers.append(writer)
            sections[name] = summary
            extras.update(files)
        out.mkdir(parents=True, exist_ok=True)
        write_combined_csv(out / "full_metrics.csv", writers)
        summary = {"seed": config.seed, "sections": sections}
        write_summary(out / "full_summary.json", summary)
        _write_extras(out, extras)
        return summary

    writer, summary, extras = DRIVERS[config.scenario](config.params, config.seed)
    stem = config.scenario.replace("-", "_")
    out.mkdir(parents=True, exist_ok=True)
    writer.write_csv(out / f"{stem}_metrics.csv")
    write_summary(out / f"{stem}_summary.json", dict(summary, seed=config.seed))
    _write_extras(out, extras)
    return summary


def _write_extras(out: Path, extras: dict[str, str]) -> None:
    for name, text in extras.items():
        with open(out / name, "w") as fh:
            fh.write(text)
