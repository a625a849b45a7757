import numpy as np
import pytest

from unida_lab.metrics import principal_direction
from unida_lab.ndcore import make_rng
from unida_lab.synthdata import LabelSplit, ToyConfig, make_toy_dataset
from unida_lab.toy import ToyTwoLayerNet


@pytest.fixture(scope="module")
def toy():
    return make_toy_dataset(ToyConfig(noise_sigma=0.5, radial_spread=0.2, split=LabelSplit(4, 1, 0)), make_rng(2))


def test_fit_learns_source(toy):
    source, _ = toy
    net = ToyTwoLayerNet().fit(source.features, source.labels)
    # five overlapping clusters; chance is 0.2
    assert net.score(source.features, source.labels) > 0.6
    assert net.loss_curve_[-1, 0] < net.loss_curve_[0, 0]
    assert net.transform(source.features).shape == (len(source), 8)


def test_alpha_zero_ignores_target(toy):
    source, target = toy
    a = ToyTwoLayerNet(steps=50).fit(source.features, source.labels)
    b = ToyTwoLayerNet(steps=50, sigma_aug=3.0).fit(source.features, source.labels, target.features)
    np.testing.assert_array_equal(a.W1_, b.W1_)


def test_ssl_needs_target(toy):
    source, _ = toy
    with pytest.raises(ValueError):
        ToyTwoLayerNet(alpha=1.0, steps=5).fit(source.features, source.labels)
    with pytest.raises(ValueError):
        ToyTwoLayerNet(lr=0.0).fit(source.features, source.labels)


def test_feature_image_matches_jacobian(toy):
    source, target = toy
    net = ToyTwoLayerNet(steps=100).fit(source.features, source.labels)
    at = target.features.mean(axis=0)
    h = 1e-6
    fd = (net.transform([at + [h, 0]]) - net.transform([at - [h, 0]]))[0] / (2 * h)
    np.testing.assert_allclose(net.feature_image([1.0, 0.0], at), fd, atol=1e-6)


def test_ssl_improves_alignment_on_one_seed(toy):
    source, target = toy

    def alignment(alpha):
        net = ToyTwoLayerNet(alpha=alpha, random_state=1).fit(source.features, source.labels, target.features)
        ref = net.feature_image([1.0, 0.0], target.features.mean(axis=0))
        return principal_direction(net.transform(target.features), ref).alignment

    assert alignment(1.0) > alignment(0.0)
