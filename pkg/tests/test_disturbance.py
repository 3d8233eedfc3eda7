import numpy as np
import pytest

from safecycle import disturbance as dist
from safecycle import events as ev
from safecycle.disturbance import SafetyLabel, StateSample
from safecycle.dynamics import RelativeState
from safecycle.reachability import value_at


def _samples(n, rng, dx=(0.0, 45.0), dv=(-9.0, 9.0), dy=(-1.5, 5.5), da=(-1.5, 1.5)):
    return [
        StateSample(
            float(rng.uniform(*dx)),
            float(rng.uniform(*dv)),
            float(rng.uniform(*dy)),
            float(rng.uniform(*da)),
        )
        for _ in range(n)
    ]


def test_label_dataset_matches_value_sign(small_field, rng):
    samples = _samples(200, rng)
    labels = dist.label_dataset(samples, small_field)
    for s, l in zip(samples, labels):
        v = value_at(small_field, RelativeState(s.dx, s.dv, s.dy))
        assert (l is SafetyLabel.SAFE) == (v > 0.0)
    # idempotent
    assert dist.label_dataset(samples, small_field) == labels


def test_label_dataset_collision_disc_is_dangerous(small_field):
    inside = StateSample(0.2, 0.0, 0.1, 0.0)
    assert dist.label_dataset([inside], small_field) == [SafetyLabel.DANGEROUS]


def test_normalize_features_examples():
    samples = [
        StateSample(0.0, -1.0, 0.0, -1.0),
        StateSample(5.0, 0.0, 1.0, 0.0),
        StateSample(10.0, 1.0, 2.0, 1.0),
    ]
    scaled, norm = dist.normalize_features(samples)
    assert np.allclose(scaled[:, 0], [0.0, 0.5, 1.0])
    out, extrapolated = norm.apply(np.array([[12.0, 0.0, 1.0, 0.0]]))
    assert out[0, 0] == pytest.approx(1.2)
    assert extrapolated[0]
    again, flag = norm.apply(np.array([[0.0, -1.0, 0.0, -1.0]]))
    assert again[0, 0] == 0.0 and not flag[0]


def test_normalize_features_roundtrip(rng):
    samples = _samples(50, rng)
    scaled, norm = dist.normalize_features(samples)
    raw = np.array([[s.dx, s.dv, s.dy, s.da] for s in samples])
    assert np.max(np.abs(norm.invert(scaled) - raw)) <= 1e-12


def test_normalize_rejects_degenerate_column():
    samples = [StateSample(1.0, 0.0, 2.0, 0.5), StateSample(1.0, 1.0, 3.0, 0.6)]
    with pytest.raises(ValueError, match="degenerate"):
        dist.normalize_features(samples)


def test_synthesize_states_ttc_algebra():
    base = [StateSample(10.0, -1.0, 2.0, 0.0)]
    out = dist.synthesize_states(base, 500, seed=3)
    assert out[:1] == base and len(out) == 501
    for s in out[1:]:
        ttc = -s.dx / s.dv
        assert 0.5 - 1e-9 <= ttc <= 20.0 + 1e-9
        assert abs(s.da) <= 1.5
    # deterministic
    again = dist.synthesize_states(base, 500, seed=3)
    assert out == again
    # n = 0 leaves input unchanged
    assert dist.synthesize_states(base, 0, seed=3) == base


def test_synthesize_states_opening_branch():
    base = [StateSample(10.0, 2.0, 2.0, 0.0)]
    out = dist.synthesize_states(base, 100, seed=4)[1:]
    for s in out:
        assert 1.0 <= s.dv <= 3.0  # additive jitter within +-1


def test_train_autoencoder_rejects_dangerous(rng):
    samples = _samples(50, rng)
    labels = [SafetyLabel.SAFE] * 49 + [SafetyLabel.DANGEROUS]
    with pytest.raises(ValueError, match="safe"):
        dist.train_autoencoder(samples, seed=0, labels=labels)


def test_train_autoencoder_descends_and_is_deterministic(rng):
    samples = _samples(300, rng)
    cfg = dist.AutoencoderConfig(epochs=40)
    m1 = dist.train_autoencoder(samples, cfg, seed=5)
    m2 = dist.train_autoencoder(samples, cfg, seed=5)
    assert all(np.isfinite(l) for l in m1.loss_history)
    assert m1.loss_history[-1] <= m1.loss_history[0]
    assert m1.tau > 0
    assert b"".join(w.tobytes() for w in m1.net.weights) == b"".join(
        w.tobytes() for w in m2.net.weights
    )
    assert m1.tau == m2.tau


def test_holdout_error_rate_matches_percentile(rng):
    samples = _samples(1000, rng)
    cfg = dist.AutoencoderConfig(epochs=60, percentile=95.0)
    model = dist.train_autoencoder(samples, cfg, seed=2)
    fresh = _samples(1000, rng)
    errors = dist.reconstruction_errors(model, fresh)
    frac_below = float(np.mean(errors <= model.tau))
    assert 0.85 <= frac_below <= 1.0


def test_classify_comfort_boundaries(rng):
    samples = _samples(200, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=30), seed=1)
    label, score = dist.classify_comfort(model, samples[0])
    assert label in ("target", "outlier") and 0.0 <= score <= 1.0
    # synthetic error boundaries via a rigged model
    err = dist.reconstruction_errors(model, [samples[0]])[0]
    rigged = dist.ComfortModel(
        normalizer=model.normalizer,
        net=model.net,
        tau=err,
        score_scale=2 * err,
        config=model.config,
    )
    label, score = dist.classify_comfort(rigged, samples[0])
    assert label == "target"  # e = tau is not an outlier (strict >)
    assert score == pytest.approx(0.5)


def test_outlier_score_monotone_in_error(rng):
    samples = _samples(200, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=30), seed=1)
    probes = _samples(100, rng)
    errors = dist.reconstruction_errors(model, probes)
    scores = np.array([dist.classify_comfort(model, p)[1] for p in probes])
    order = np.argsort(errors)
    assert np.all(np.diff(scores[order]) >= -1e-12)


def test_evaluate_classifier_separation_extremes(rng):
    samples = _samples(40, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=10), seed=1)
    errors = dist.reconstruction_errors(model, samples)
    order = np.argsort(errors)
    labels = [SafetyLabel.SAFE] * len(samples)
    for i in order[-8:]:
        labels[i] = SafetyLabel.DANGEROUS  # highest errors = dangerous
    scores = dist.evaluate_classifier(model, samples, labels)
    assert scores["auc"] == pytest.approx(1.0)
    with pytest.raises(ValueError, match="both"):
        dist.evaluate_classifier(model, samples, [SafetyLabel.SAFE] * len(samples))


def test_evaluate_classifier_chance_level(rng):
    samples = _samples(2000, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=5), seed=1)
    labels = [
        SafetyLabel.DANGEROUS if rng.random() < 0.5 else SafetyLabel.SAFE
        for _ in samples
    ]
    scores = dist.evaluate_classifier(model, samples, labels)
    assert abs(scores["auc"] - 0.5) < 0.06


def test_auc_matches_sklearn(rng):
    from sklearn.metrics import roc_auc_score

    samples = _samples(300, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=10), seed=3)
    probes = _samples(300, rng)
    labels = [
        SafetyLabel.DANGEROUS if rng.random() < 0.3 else SafetyLabel.SAFE
        for _ in probes
    ]
    mine = dist.evaluate_classifier(model, probes, labels)["auc"]
    errors = dist.reconstruction_errors(model, probes)
    y = np.array([l is SafetyLabel.DANGEROUS for l in labels])
    assert mine == pytest.approx(roc_auc_score(y, errors), abs=1e-12)


def test_assemble_dataset_steers_dangerous_fraction(fine_field, rng):
    events = ev.generate_synthetic_events(20, seed=11)
    base = dist.samples_from_events(events)
    samples, labels = dist.assemble_labeled_dataset(
        base, fine_field, n_total=1500, seed=4
    )
    frac = np.mean([l is SafetyLabel.DANGEROUS for l in labels])
    assert 0.05 <= frac <= 0.10
    assert len(samples) == 1500
    # deterministic
    samples2, labels2 = dist.assemble_labeled_dataset(
        base, fine_field, n_total=1500, seed=4
    )
    assert samples == samples2 and labels == labels2


def test_samples_from_events_finite_differences():
    event = ev.generate_synthetic_events(1, seed=2)[0]
    samples = dist.samples_from_events([event])
    assert len(samples) == len(event.records)
    speeds = np.array([r.ego_speed + r.dv for r in event.records])
    da = (speeds[1] - speeds[0]) / (
        event.records[1].timestamp - event.records[0].timestamp
    )
    assert samples[0].da == pytest.approx(da)


def test_disturbance_score_adapter(rng):
    samples = _samples(300, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=30), seed=6)
    score = dist.as_disturbance_score(model)
    states = np.array([[10.0, -2.0, 2.0], [1.0, -9.0, 0.0]])
    out = score(states)
    assert out.shape == (2,)
    assert np.all((out >= 0.0) & (out <= 1.0))


def test_comfort_model_roundtrip(tmp_path, rng):
    samples = _samples(200, rng)
    model = dist.train_autoencoder(samples, dist.AutoencoderConfig(epochs=20), seed=8)
    base = tmp_path / "comfort"
    dist.save_comfort_model(model, base)
    loaded = dist.load_comfort_model(base)
    assert loaded.tau == model.tau
    assert loaded.normalizer == model.normalizer
    probes = _samples(20, rng)
    assert np.allclose(
        dist.reconstruction_errors(loaded, probes),
        dist.reconstruction_errors(model, probes),
    )


def test_labeled_csv_roundtrip(tmp_path, rng):
    samples = _samples(30, rng)
    labels = [
        SafetyLabel.DANGEROUS if i % 7 == 0 else SafetyLabel.SAFE
        for i in range(len(samples))
    ]
    path = tmp_path / "labeled.csv"
    dist.save_labeled_csv(samples, labels, path)
    s2, l2 = dist.load_labeled_csv(path)
    assert s2 == samples and l2 == labels
    assert path.read_text().splitlines()[0] == "dx,dv,dy,da,label"
