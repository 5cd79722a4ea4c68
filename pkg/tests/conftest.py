from pathlib import Path

import numpy as np
import pytest

from srnstat.bench import SCHLOGL_BIMODAL, SCHLOGL_UNIMODAL, schlogl_network, schlogl_reference
from srnstat.model import load_model

MODELS = Path(__file__).resolve().parent.parent / "models"


@pytest.fixture(scope="session")
def models_dir():
    return MODELS


@pytest.fixture(scope="session")
def toggle():
    return load_model(MODELS / "toggle.rxn")


@pytest.fixture(scope="session")
def parity():
    return load_model(MODELS / "parity.rxn")


@pytest.fixture(scope="session")
def bimodal():
    return schlogl_network(SCHLOGL_BIMODAL)


@pytest.fixture(scope="session")
def unimodal():
    return schlogl_network(SCHLOGL_UNIMODAL)


@pytest.fixture(scope="session")
def bimodal_oracle():
    return schlogl_reference(SCHLOGL_BIMODAL)


@pytest.fixture(scope="session")
def unimodal_oracle():
    return schlogl_reference(SCHLOGL_UNIMODAL)


def dense_generator(net, T):
    """Dense truncated rate matrix with the full exit rate on the diagonal."""
    from srnstat.numlin import assemble_Qr

    return assemble_Qr(net, T).toarray()


def padded(values, n):
    out = np.zeros(n)
    out[: min(n, values.size)] = values[:n]
    return out
