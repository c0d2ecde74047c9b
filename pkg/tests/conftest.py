import pytest

from sgnn.graphs import SignedGraph, pearson, signed_split, zscore_rows
from sgnn.model import ModelDims, init_params
from sgnn.numerics import RngStream


def make_random_graph(rng: RngStream, parcels: int, timepoints: int = 40,
                      label: int = 0, split: str = "train") -> SignedGraph:
    """A valid SignedGraph from random noise, via the real pipeline ops."""
    corr = pearson(zscore_rows(rng.normal_matrix(parcels, timepoints)))
    a_plus, a_minus = signed_split(corr)
    return SignedGraph(a_plus=a_plus, a_minus=a_minus, label=label, split=split)


def make_random_params(rng: RngStream, parcels: int, classes: int, dims: ModelDims):
    """Model parameters with a generic (non-zero, symmetric) mask."""
    params = init_params(parcels, classes, dims, rng.child("init"))
    return params.replace(
        mask_raw=rng.child("mask").normal_matrix(parcels, parcels).symmetrize()
    )


@pytest.fixture
def rng():
    return RngStream(20260810)
