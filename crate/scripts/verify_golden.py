"""Independent recomputation of the golden dashboard payload.

Reads the committed config, log and snapshot, recomputes every number in
payload.json with numpy (ridge refits, epsilon-greedy probabilities, IPS,
percentiles, radar, context bars) and compares against the committed file.

    python3 scripts/verify_golden.py [fixture_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

TOL = 1e-9


def encode(schema, raw):
    x = [1.0]
    for f in schema["fields"]:
        if f["kind"] == "categorical":
            x += [1.0 if raw[f["name"]] == lvl else 0.0 for lvl in f["levels"]]
        else:
            x.append((raw[f["name"]] - f["min"]) / (f["max"] - f["min"]))
    return np.array(x)


def field_span(schema, name):
    start = 1
    for f in schema["fields"]:
        width = len(f["levels"]) if f["kind"] == "categorical" else 1
        if f["name"] == name:
            return list(range(start, start + width))
        start += width
    raise KeyError(name)


def ridge(X, arms, R, k, lam, masked=()):
    X = X.copy()
    X[:, list(masked)] = 0.0
    d = X.shape[1]
    thetas = []
    for a in range(k):
        Xa, Ra = X[arms == a], R[arms == a]
        A = lam * np.eye(d) + Xa.T @ Xa
        thetas.append(np.linalg.solve(A, Xa.T @ Ra))
    return np.array(thetas)


def argmax_lex(scores, ids):
    best = max(scores)
    return min((i for i, s in enumerate(scores) if s == best), key=lambda i: ids[i])


def eps_greedy(theta, x, ids, eps, p_min, masked=(), excluded=()):
    x = x.copy()
    x[list(masked)] = 0.0
    means = theta @ x
    k = len(ids)
    p = np.full(k, eps / k)
    p[argmax_lex(list(means), ids)] += 1 - eps
    assert (p >= p_min).all()  # floor is a no-op for this fixture
    for e in excluded:
        p[e] = 0.0
    return p / p.sum()


def mean_se(v):
    return v.mean(), v.std(ddof=1) / np.sqrt(len(v))


def check(label, got, want):
    if want is None or got is None:
        assert got == want, f"{label}: {got} != {want}"
        return
    scale = max(1.0, abs(want))
    assert abs(got - want) <= TOL * scale, f"{label}: {got} != {want}"


def main(fixture):
    cfg = tomllib.loads((fixture / "desk.toml").read_text())
    snap = json.loads((fixture / "snapshot.json").read_text())
    payload = json.loads((fixture / "payload.json").read_text())
    recs = [json.loads(line) for line in (fixture / "logs.jsonl").read_text().splitlines() if line]

    ids = [a["arm_id"] for a in cfg["arms"]]
    base = next(i for i, a in enumerate(cfg["arms"]) if a["is_baseline"])
    k = len(ids)
    schema = cfg["schema"]
    lam = cfg["policy"]["ridge_lambda"]
    eps = cfg["policy"]["rule"]["epsilon"]
    p_min = cfg["policy"]["p_min"]
    clip = cfg["estimator"]["clip"]

    X = np.array([encode(schema, r["context"]) for r in recs])
    arms = np.array([ids.index(r["arm_id"]) for r in recs])
    R = np.array([r["reward"] for r in recs])
    P = np.array([r["propensity"] for r in recs])
    n = len(recs)

    # Snapshot sufficient statistics equal a batch ridge fit on the log.
    theta = ridge(X, arms, R, k, lam)
    for a, arm in enumerate(snap["model"]["arms"]):
        A = np.array(arm["a"]).reshape(X.shape[1], -1)
        b = np.array(arm["b"])
        assert np.allclose(np.linalg.solve(A, b), theta[a], atol=1e-10)

    v_pi, se_pi = mean_se(R)

    def gain(probs_fn):
        w = np.array([probs_fn(x)[a] for x, a in zip(X, arms)]) / P
        w = np.minimum(w, clip)
        v, se = mean_se(w * R)
        return v_pi - v, np.hypot(se_pi, se), v, se

    # Top level.
    def baseline(_x):
        p = np.zeros(k)
        p[base] = 1.0
        return p

    g, gse, vb, seb = gain(baseline)
    top = payload["top_level"]
    check("uplift_pct", top["uplift_vs_original_pct"], 100 * g / vb)
    check(
        "uplift_se_pct",
        top["uplift_vs_original_se_pct"],
        100 * np.hypot(se_pi / vb, v_pi * seb / vb**2),
    )
    check("reward_per_player", top["reward_per_player"], R.sum() / n)
    assert top["players"] == n
    check("baseline gain", top["baseline_gain"]["gain"], g)
    check("baseline gain se", top["baseline_gain"]["gain_se"], gse)

    # Variant rows.
    preds = X @ theta.T  # n × k
    best = np.array([argmax_lex(list(row), ids) for row in preds])
    for a, row in enumerate(payload["variant_rows"]):
        assert row["arm_id"] == ids[a]
        check(f"{ids[a]} mean", row["mean_reward"], preds[:, a].mean())
        check(f"{ids[a]} p10", row["p10"], np.percentile(preds[:, a], 10))
        check(f"{ids[a]} p90", row["p90"], np.percentile(preds[:, a], 90))
        check(f"{ids[a]} share", row["display_share"], float((arms == a).mean()))
        check(f"{ids[a]} best share", row["predicted_best_share"], float((best == a).mean()))
        g, gse, _, _ = gain(lambda x, a=a: eps_greedy(theta, x, ids, eps, p_min, excluded=[a]))
        check(f"{ids[a]} benefit", row["expected_benefit"], g)
        check(f"{ids[a]} benefit se", row["expected_benefit_se"], gse)

    # Radar.
    seen = {}
    for r, x in zip(recs, X):
        key = ";".join(f"{f}={v}" for f, v in sorted(r["context"].items()))
        seen.setdefault(key, x)
    uplifts = {}
    for key, x in seen.items():
        mu = theta @ x
        b = argmax_lex(list(mu), ids)
        uplifts[key] = (b, 0.0 if b == base else max(0.0, (mu[b] - mu[base]) / mu[base]))
    top_uplift = max(u for _, u in uplifts.values())
    dots = {d["context_key"]: d for d in payload["radar"]}
    assert sorted(dots) == sorted(uplifts)
    for key, (b, u) in uplifts.items():
        assert dots[key]["best_arm_id"] == ids[b]
        check(f"radar {key} uplift", dots[key]["uplift"], u)
        check(f"radar {key} distance", dots[key]["distance"], u / top_uplift if top_uplift > 0 else 0.0)

    # Context bars.
    for bar in payload["context_bars"]:
        span = field_span(schema, bar["field"])
        refit = ridge(X, arms, R, k, lam, masked=span)
        g, gse, _, _ = gain(lambda x: eps_greedy(refit, x, ids, eps, p_min, masked=span))
        check(f"bar {bar['field']}", bar["gain"], g)
        check(f"bar {bar['field']} se", bar["gain_se"], gse)

    print(f"golden payload verified: {n} records, {k} arms, {len(dots)} radar dots")


if __name__ == "__main__":
    default = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/golden"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
