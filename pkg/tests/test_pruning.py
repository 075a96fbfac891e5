"""Loss curves, cut-off selection, baselines and the prune plan file."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probecut.probe import LayerAccuracyCurve
from probecut.pruning import (
    CutoffDecision,
    LossCurve,
    baseline_cutpoints,
    load_prune_plan,
    loss_curve,
    prune_plan,
    save_prune_plan,
    select_kcut,
)


def lc(losses, layers=None, dataset="d", feature="cc"):
    if layers is None:
        layers = tuple(range(len(losses)))
    return LossCurve(dataset_id=dataset, feature=feature,
                     layer_indices=tuple(layers), losses=tuple(losses))


# ------------------------------------------------------------------ loss curve

def test_loss_is_gap_to_best_layer():
    curve = LayerAccuracyCurve("d", "cc", ("A",), (0, 1, 2),
                               ((0.5,), (0.7,), (0.6,)))
    out = loss_curve(curve)
    assert out.losses == pytest.approx((0.2, 0.0, 0.1))
    assert out.layer_indices == (0, 1, 2)
    assert out.curve_id == "d/cc"


def test_loss_uses_group_average():
    curve = LayerAccuracyCurve("d", "hd", ("A", "B"), (0, 1),
                               ((0.4, 0.6), (0.9, 0.7)))  # avgs 0.5, 0.8
    out = loss_curve(curve)
    assert out.losses == pytest.approx((0.3, 0.0))


def test_loss_curve_validation():
    with pytest.raises(ValueError, match="loss exactly 0"):
        LossCurve("d", "cc", (0, 1), (0.1, 0.2))
    with pytest.raises(ValueError, match="non-negative"):
        LossCurve("d", "cc", (0, 1), (-0.1, 0.0))
    with pytest.raises(ValueError, match="empty curve"):
        LossCurve("d", "cc", (), ())
    with pytest.raises(ValueError, match="one loss per layer"):
        LossCurve("d", "cc", (0,), (0.0, 0.1))


# ------------------------------------------------------------------ selection

def test_argmin_of_summed_scores():
    # totals (0.9, 0.1, 0.4) across two curves
    a = lc([0.9, 0.0, 0.4])
    b = lc([0.0, 0.1, 0.0], feature="hd")
    decision = select_kcut([a, b])
    assert decision.total_scores == pytest.approx((0.9, 0.1, 0.4))
    assert decision.k_cut == 1


def test_sum_across_curves():
    # layer 1 wins on the first curve, layer 2 on the second; the sum decides
    a = lc([0.9, 0.0, 0.4])
    b = lc([0.8, 0.5, 0.0], feature="hd")
    decision = select_kcut([a, b])
    assert decision.total_scores == pytest.approx((1.7, 0.5, 0.4))
    assert decision.k_cut == 2
    assert decision.curve_ids == ("d/cc", "d/hd")


def test_tie_breaks_to_smallest_layer():
    decision = select_kcut([lc([0.0, 0.0, 0.3])])
    assert decision.k_cut == 0


def test_all_zero_curve_picks_layer_zero():
    decision = select_kcut([lc([0.0, 0.0, 0.0])])
    assert decision.k_cut == 0


def test_mismatched_layer_ranges_rejected():
    a = lc([0.1, 0.0], layers=(0, 1))
    b = lc([0.1, 0.0, 0.2], layers=(0, 1, 2), feature="hd")
    with pytest.raises(ValueError, match=r"curve d/hd covers layers 0\.\.2"):
        select_kcut([a, b])


def test_no_curves_rejected():
    with pytest.raises(ValueError, match="at least one curve"):
        select_kcut([])


def test_scaling_losses_leaves_kcut_unchanged():
    curves = [lc([0.4, 0.1, 0.0, 0.2]), lc([0.3, 0.0, 0.1, 0.5], feature="hd")]
    scaled = [lc(tuple(l * 0.25 for l in c.losses), feature=c.feature) for c in curves]
    assert select_kcut(curves).k_cut == select_kcut(scaled).k_cut


def test_decision_validation():
    with pytest.raises(ValueError, match="minimize"):
        CutoffDecision(k_cut=0, layer_indices=(0, 1), total_scores=(0.5, 0.1),
                       curve_ids=("d/cc",))
    with pytest.raises(ValueError, match="one of the scored layers"):
        CutoffDecision(k_cut=5, layer_indices=(0, 1), total_scores=(0.1, 0.5),
                       curve_ids=("d/cc",))


@st.composite
def curve_bundles(draw):
    num_layers = draw(st.integers(min_value=2, max_value=12))
    num_curves = draw(st.integers(min_value=1, max_value=5))
    curves = []
    for ci in range(num_curves):
        vals = draw(
            st.lists(
                st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
                min_size=num_layers, max_size=num_layers,
            )
        )
        low = min(range(num_layers), key=lambda i: vals[i])
        vals[low] = 0.0  # every curve needs an exact best layer
        curves.append(lc(vals, dataset=f"d{ci}"))
    return curves


@settings(max_examples=120, deadline=None)
@given(curve_bundles())
def test_selection_matches_exhaustive_search(curves):
    decision = select_kcut(curves)
    layers = curves[0].layer_indices
    totals = {k: sum(c.losses[i] for c in curves) for i, k in enumerate(layers)}
    brute = min(layers, key=lambda k: (totals[k], k))
    assert decision.k_cut == brute


# ------------------------------------------------------------------ baselines

def test_half_cut_values():
    assert baseline_cutpoints(15, 24, seed=0)["half_cut"] == 7
    assert baseline_cutpoints(5, 18, seed=0)["half_cut"] == 2


def test_random_removed_count_and_range():
    out = baseline_cutpoints(15, 24, seed=11)
    removed = out["random_removed"]
    assert len(removed) == 24 - 15
    assert all(1 <= i <= 24 for i in removed)  # embedding (0) never removed


def test_random_removed_deterministic():
    a = baseline_cutpoints(5, 18, seed=42)["random_removed"]
    b = baseline_cutpoints(5, 18, seed=42)["random_removed"]
    c = baseline_cutpoints(5, 18, seed=43)["random_removed"]
    assert a == b
    assert a != c


def test_baseline_bounds():
    with pytest.raises(ValueError):
        baseline_cutpoints(0, 18, seed=0)
    with pytest.raises(ValueError):
        baseline_cutpoints(18, 18, seed=0)


# ----------------------------------------------------------------- prune plan

def test_retained_layers_complement_removed():
    retained = prune_plan(15, 24)
    assert retained == list(range(16))
    # embedding plus k_cut transformer layers stay; the rest go
    assert len(retained) + (24 - 15) == 24 + 1


def test_prune_plan_edges():
    assert prune_plan(0, 4) == [0]
    assert prune_plan(4, 4) == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        prune_plan(5, 4)
    with pytest.raises(ValueError):
        prune_plan(-1, 4)


def test_plan_file_round_trip(tmp_path):
    path = tmp_path / "plan.json"
    save_prune_plan(5, 18, path)
    plan = load_prune_plan(path)
    assert plan["k_cut"] == 5
    assert plan["total_layers"] == 18
    assert plan["retained_layers"] == list(range(6))


def test_plan_file_tolerates_comment_headers(tmp_path):
    path = tmp_path / "plan.json"
    save_prune_plan(3, 12, path)
    path.write_text("# tool x\n# seed: 0\n" + path.read_text())
    assert load_prune_plan(path)["k_cut"] == 3


def test_tampered_plan_rejected(tmp_path):
    path = tmp_path / "plan.json"
    save_prune_plan(3, 12, path)
    text = path.read_text().replace("\"k_cut\": 3", "\"k_cut\": 4")
    path.write_text(text)
    with pytest.raises(ValueError, match="retained_layers inconsistent"):
        load_prune_plan(path)
