import numpy as np
import pytest

from cfris.channel import ChannelSet
from cfris.impairments import build_distortion, sample_iqi
from cfris.scenario import ScenarioConfig, subcarrier_indices
from cfris.system import herm


def cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_instance(rng, S=4, K=3, Q=2, M=4, Nt=2, C=2, Nr=2, b=2, level="level3"):
    """Unit-scale random channels, level-3 IQI and random U, V, W blocks."""
    cfg = ScenarioConfig(num_aps=C, num_ues=K, num_ris=Q, elements_per_ris=M, num_subcarriers=S,
                         tx_antennas=Nt, rx_antennas=Nr, streams=b)
    QM, CNr = Q * M, C * Nr
    ch = ChannelSet(cn(rng, S, K, QM, Nt), cn(rng, S, CNr, QM), cn(rng, S, K, CNr, Nt),
                    subcarrier_indices(S))
    dist = build_distortion(sample_iqi(level, cfg, rng))
    U, V = cn(rng, S, K, CNr, b), cn(rng, S, K, Nt, b)
    Wr = cn(rng, S, K, b, b)
    W = Wr @ herm(Wr) + np.eye(b)
    return cfg, ch, dist, U, V, W, np.ones((S, K), bool)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_cfg():
    return ScenarioConfig()
