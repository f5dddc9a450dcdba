import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from foreclassnet import autodiff as ad
from foreclassnet.errors import ContractError, DimensionError
from foreclassnet.evaluation import confusion_matrix, metrics, metrics_summary, metrics_to_csv, model_saliency, \
    saliency, saliency_csv
from foreclassnet.network import ForeClassNet, ForeClassNetConfig

SMALL = dict(m=12, k=3, z=(3, 6), channels=(4, 4), dilations=(1, 2), forecast_widths=(8,), classifier_widths=(8,))


def test_all_correct():
    m = metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m.accuracy == 1.0 and m.f1_macro == 1.0 and m.f1_weighted == 1.0
    assert m.f1_binary is None


def test_binary_worked_value():
    y = [1] * 5 + [0] * 5
    p = [1, 1, 1, 1, 0] + [1, 0, 0, 0, 0]
    m = metrics(y, p, 2)
    assert m.f1_binary == pytest.approx(0.8, abs=1e-15)
    assert m.accuracy == pytest.approx(0.8, abs=1e-15)
    assert m.confusion.tolist() == [[4, 1], [1, 4]]


def test_absent_class_scores_zero_and_counts_in_macro():
    m = metrics([0, 1, 0, 1], [0, 1, 0, 1], 3)
    assert m.per_class_f1.tolist() == [1.0, 1.0, 0.0]
    assert m.f1_macro == pytest.approx(2 / 3)
    assert m.f1_weighted == 1.0


def test_errors():
    with pytest.raises(ContractError):
        metrics([], [], 2)
    with pytest.raises(DimensionError):
        metrics([0, 1], [0], 2)
    with pytest.raises(ContractError):
        metrics([0, 3], [0, 1], 2)


labels = st.integers(2, 5).flatmap(
    lambda L: st.tuples(st.just(L), st.lists(st.tuples(st.integers(0, L - 1), st.integers(0, L - 1)),
                                             min_size=1, max_size=60)))


@settings(max_examples=80, deadline=None)
@given(case=labels)
def test_matches_sklearn(case):
    L, pairs = case
    y, p = np.array(pairs).T
    m = metrics(y, p, L)
    classes = list(range(L))
    assert m.f1_macro == pytest.approx(f1_score(y, p, labels=classes, average="macro", zero_division=0), abs=1e-12)
    # sklearn's weighted average renormalises by present support, same as ours
    assert m.f1_weighted == pytest.approx(f1_score(y, p, labels=classes, average="weighted", zero_division=0),
                                          abs=1e-12)
    if L == 2:
        assert m.f1_binary == pytest.approx(f1_score(y, p, pos_label=1, zero_division=0), abs=1e-12)
    cm = m.confusion
    assert cm.sum() == len(y) and np.all(cm >= 0)
    assert m.accuracy == pytest.approx(np.trace(cm) / cm.sum(), abs=0)


@settings(max_examples=40, deadline=None)
@given(L=st.integers(2, 4), per=st.integers(1, 10), seed=st.integers(0, 1000))
def test_macro_equals_weighted_for_equal_support(L, per, seed):
    y = np.repeat(np.arange(L), per)
    p = np.random.default_rng(seed).integers(0, L, size=y.size)
    m = metrics(y, p, L)
    assert m.f1_macro == pytest.approx(m.f1_weighted, abs=1e-12)


def test_confusion_orientation():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]


def test_metric_text_outputs():
    m = metrics([0, 1, 1], [0, 1, 0], 2)
    lines = metrics_to_csv(m).splitlines()
    assert lines[0] == "metric,value" and lines[1].startswith("accuracy,0.666")
    assert "confusion" in metrics_summary(m)


# ------------------------------------------------------------ saliency


def test_linear_logit_saliency_is_abs_weights():
    w = np.array([[1.5, -2.0, 0.0, 0.25], [0.1, 0.1, 0.1, 0.1]])
    x = np.array([1.0, -1.0, 3.0, 2.0])  # class 0 logit = 4.0 > 0.5
    sal = saliency(lambda t: ad.matmul(ad.as_tensor(w), ad.reshape(t, (4, 1))), x)
    np.testing.assert_array_equal(sal, np.abs(w[0]))


def test_constant_logits_give_zero_saliency():
    sal = saliency(lambda t: ad.add(ad.mul(ad.tensor_sum(t), 0.0), np.array([1.0, 2.0])), np.ones(5))
    assert np.all(sal == 0.0)


def test_saliency_invariant_to_logit_shift():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 6))
    x = rng.normal(size=6)
    base = saliency(lambda t: ad.sigmoid(ad.matmul(ad.as_tensor(w), ad.reshape(t, (6, 1)))), x)
    shifted = saliency(lambda t: ad.add(ad.sigmoid(ad.matmul(ad.as_tensor(w), ad.reshape(t, (6, 1)))), 7.5), x)
    np.testing.assert_array_equal(base, shifted)


def test_model_saliency_shape_and_sign():
    model = ForeClassNet(ForeClassNetConfig(**SMALL))
    x = np.random.default_rng(1).normal(size=(4, 12))
    sal = model_saliency(model, x, seed=2)
    assert sal.shape == (4, 12) and np.all(sal >= 0) and np.any(sal > 0)
    np.testing.assert_array_equal(sal, model_saliency(model, x, seed=2))


def test_model_saliency_per_sample_independent_of_batch():
    model = ForeClassNet(ForeClassNetConfig(**SMALL))
    for layer in model._all_layers():
        for d in getattr(layer, "dropouts", None) or [getattr(layer, "dropout", None)]:
            if d is not None:
                d.p_logit.data = np.array(-40.0)
    x = np.random.default_rng(1).normal(size=(3, 12))
    together = model_saliency(model, x)
    alone = model_saliency(model, x[1:2])
    np.testing.assert_allclose(together[1], alone[0], rtol=1e-12, atol=1e-15)


def test_zeroed_classifier_gives_zero_saliency():
    model = ForeClassNet(ForeClassNetConfig(**SMALL))
    last = model.classifier_head[-1]
    last.weight.data = np.zeros_like(last.weight.data)
    sal = model_saliency(model, np.random.default_rng(3).normal(size=(2, 12)))
    assert np.all(sal == 0.0)


def test_saliency_csv_two_columns():
    text = saliency_csv([1.0, 2.0], [0.5, 0.0])
    assert text.splitlines() == ["value,saliency", "1.0,0.5", "2.0,0.0"]
    with pytest.raises(DimensionError):
        saliency_csv([1.0], [1.0, 2.0])
