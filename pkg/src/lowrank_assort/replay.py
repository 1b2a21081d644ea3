"""Dataset replay: ingest logged interactions, fit, and re-simulate.

Items CSV: header then one row per item, columns `item_id`, d2 feature
columns, `revenue`. Interactions CSV: header then one row per step,
columns d1 user feature values, the offered item_ids separated by
semicolons, and the chosen item_id (empty field = no purchase). All
parse errors carry the 1-based line number.

Replay fits the bilinear parameter on the full log at the GIC-selected
rank, then treats that estimate as ground truth in a simulation whose
users are resampled uniformly with replacement from the observed
contexts. Choices during evaluation are simulated from the fitted model;
the log's outcomes only inform the fit.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from functools import partial

import numpy as np

from .choice import (
    Assortment,
    ChoiceObservation,
    ItemCatalog,
    UserContext,
    choice_probabilities,
    sample_choice,
)
from .likelihood import ObservationSet, SolverConfig
from .simulate import Environment, ExperimentPlan, GroundTruth, PolicyArm, replicate
from .subspace import FgdConfig, gic_search


def _read_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.reader(handle))


def load_items(path):
    """Parse an items CSV into (ItemCatalog, item id list)."""
    rows = _read_rows(path)
    if not rows:
        raise ValueError(f"{path}: file is empty")
    ncols = len(rows[0])
    if ncols < 3:
        raise ValueError(
            f"{path}: line 1: header needs item_id, at least one feature "
            "column, and revenue"
        )
    ids, features, revenues = [], [], []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != ncols:
            raise ValueError(
                f"{path}: line {lineno}: expected {ncols} fields, got {len(row)}"
            )
        item_id = row[0].strip()
        if not item_id:
            raise ValueError(f"{path}: line {lineno}: empty item_id")
        if item_id in seen:
            raise ValueError(f"{path}: line {lineno}: duplicate item_id {item_id!r}")
        seen.add(item_id)
        try:
            values = [float(cell) for cell in row[1:]]
        except ValueError:
            raise ValueError(
                f"{path}: line {lineno}: non-numeric feature or revenue"
            ) from None
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{path}: line {lineno}: non-finite value")
        if values[-1] < 0:
            raise ValueError(f"{path}: line {lineno}: negative revenue")
        ids.append(item_id)
        features.append(values[:-1])
        revenues.append(values[-1])
    if not ids:
        raise ValueError(f"{path}: no item rows")
    catalog = ItemCatalog(
        features=np.asarray(features), revenues=np.asarray(revenues)
    )
    return catalog, ids


def load_interactions(path, item_ids):
    """Parse an interactions CSV into choice observations.

    Returns (records tuple, max offered size). Offered sets must be
    non-empty, distinct, and reference known item ids; a chosen id must
    belong to its offered set.
    """
    index = {item_id: pos for pos, item_id in enumerate(item_ids)}
    rows = _read_rows(path)
    if not rows:
        raise ValueError(f"{path}: file is empty")
    ncols = len(rows[0])
    if ncols < 3:
        raise ValueError(
            f"{path}: line 1: header needs user feature columns, offered, chosen"
        )
    d1 = ncols - 2
    records = []
    widest = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != ncols:
            raise ValueError(
                f"{path}: line {lineno}: expected {ncols} fields, got {len(row)}"
            )
        try:
            q = np.array([float(cell) for cell in row[:d1]])
        except ValueError:
            raise ValueError(
                f"{path}: line {lineno}: non-numeric user feature"
            ) from None
        if not np.all(np.isfinite(q)):
            raise ValueError(f"{path}: line {lineno}: non-finite user feature")
        offered_field = row[d1].strip()
        if not offered_field:
            raise ValueError(f"{path}: line {lineno}: empty offered set")
        offered_ids = [part.strip() for part in offered_field.split(";")]
        items = []
        for item_id in offered_ids:
            if item_id not in index:
                raise ValueError(
                    f"{path}: line {lineno}: unknown item_id {item_id!r}"
                )
            items.append(index[item_id])
        if len(set(items)) != len(items):
            raise ValueError(
                f"{path}: line {lineno}: duplicate item in offered set"
            )
        chosen_field = row[d1 + 1].strip()
        if chosen_field:
            if chosen_field not in index:
                raise ValueError(
                    f"{path}: line {lineno}: unknown chosen item_id "
                    f"{chosen_field!r}"
                )
            chosen = index[chosen_field]
            if chosen not in items:
                raise ValueError(
                    f"{path}: line {lineno}: chosen item {chosen_field!r} "
                    "is not in the offered set"
                )
        else:
            chosen = None
        widest = max(widest, len(items))
        records.append(ChoiceObservation(
            user=UserContext(q),
            assortment=Assortment(tuple(sorted(items)), capacity=len(items)),
            chosen=chosen,
        ))
    if not records:
        raise ValueError(f"{path}: no interaction rows")
    return tuple(records), widest


def _replay_environment(seed, phi, rank, singular_values, features,
                        revenues, pool):
    catalog = ItemCatalog(features=features, revenues=revenues)
    truth = GroundTruth(phi_star=phi, rank=rank,
                        singular_values=singular_values)
    return Environment(catalog=catalog, truth=truth, seed=seed,
                       scenario="replay", user_pool=pool)


def replay_from_dataset(items_csv, interactions_csv, rank_grid, arms,
                        resample_T, seed, replications: int = 1,
                        checkpoints=None, capacity=None,
                        fgd: FgdConfig | None = None,
                        solver: SolverConfig | None = None,
                        n_jobs: int = 1):
    """Fit on the log, re-simulate with resampled users.

    Returns (selected rank, gic scores, aggregate). capacity defaults to
    the widest offered set in the log; every arm is rebound to it so the
    policies and the environment agree on K.
    """
    catalog, item_ids = load_items(items_csv)
    records, widest = load_interactions(interactions_csv, item_ids)
    data = ObservationSet(catalog, records)
    selected, scores, fit = gic_search(data, rank_grid, fgd, solver)
    spectrum = np.linalg.svd(fit.phi, compute_uv=False)
    pool = np.stack([rec.user.features for rec in records])
    capacity = int(capacity) if capacity else widest
    arms = tuple(
        PolicyArm(name=a.name, kind=a.kind,
                  config=replace(a.config, capacity=capacity))
        for a in arms
    )
    if checkpoints is None:
        checkpoints = (resample_T,)
    env_factory = partial(
        _replay_environment,
        phi=fit.phi, rank=selected, singular_values=spectrum,
        features=catalog.features, revenues=catalog.revenues, pool=pool,
    )
    plan = ExperimentPlan(
        env_factory=env_factory, arms=arms,
        horizon=resample_T, checkpoints=tuple(checkpoints),
    )
    seeds = [seed + i for i in range(replications)]
    aggregate = replicate(plan, seeds, n_jobs=n_jobs)
    return selected, scores, aggregate


def collect_random_observations(environment: Environment, horizon: int,
                                capacity: int) -> ObservationSet:
    """Simulate uniform-random offers on an environment and log them."""
    n_items = environment.catalog.n_items
    k = min(capacity, n_items)
    rng = environment.policy_rng("export")
    records = []
    for t in range(1, horizon + 1):
        user = environment.user(t)
        items = tuple(sorted(
            int(i) for i in rng.choice(n_items, size=k, replace=False)
        ))
        utilities = environment.true_utilities(user.features)[list(items)]
        pick = sample_choice(
            choice_probabilities(utilities), environment.choice_rng(t)
        )
        chosen = None if pick == 0 else items[pick - 1]
        records.append(ChoiceObservation(
            user=user,
            assortment=Assortment(items, capacity=capacity),
            chosen=chosen,
        ))
    return ObservationSet(environment.catalog, tuple(records))


def export_dataset(environment: Environment, horizon: int, capacity: int,
                   items_path, interactions_path):
    """Write a synthetic environment's random-offer log as replay CSVs."""
    catalog = environment.catalog
    ids = [f"item{i}" for i in range(catalog.n_items)]
    d2 = catalog.n_features
    with open(items_path, "w", encoding="utf-8", newline="\n") as out:
        cols = ["item_id"] + [f"f{j}" for j in range(d2)] + ["revenue"]
        out.write(",".join(cols) + "\n")
        for i, item_id in enumerate(ids):
            cells = [item_id]
            cells += [format(x, ".17g") for x in catalog.features[i]]
            cells.append(format(catalog.revenues[i], ".17g"))
            out.write(",".join(cells) + "\n")
    data = collect_random_observations(environment, horizon, capacity)
    d1 = data.user_dim
    with open(interactions_path, "w", encoding="utf-8", newline="\n") as out:
        cols = [f"q{j}" for j in range(d1)] + ["offered", "chosen"]
        out.write(",".join(cols) + "\n")
        for rec in data.records:
            cells = [format(x, ".17g") for x in rec.user.features]
            cells.append(";".join(ids[i] for i in rec.assortment.items))
            cells.append("" if rec.chosen is None else ids[rec.chosen])
            out.write(",".join(cells) + "\n")
    return items_path, interactions_path
