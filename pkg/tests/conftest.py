import numpy as np
import pytest

from vmfgeo import ingest
from vmfgeo.sphere import geo_to_cart

CITIES = {
    "Paris": (48.8566, 2.3522),
    "Tokyo": (35.6762, 139.6503),
    "Sao Paulo": (-23.5505, -46.6333),
    "Sydney": (-33.8688, 151.2093),
}
_SUBJECTS = ["The museum", "A small church", "The old market", "This railway station",
             "A public library", "The harbour", "A city park", "The university campus"]
_VERBS = ["is located in", "stands in the centre of", "can be found near",
          "lies on the outskirts of", "is a landmark of"]
_TAILS = ["and attracts many visitors.", "and was built in the nineteenth century.",
          "where it serves the local community.", "and is open all year.", ""]


def toy_corpus(per_city=200, seed=0) -> ingest.Dataset:
    """Four far-apart cities; each text names exactly one of them."""
    rng = np.random.default_rng(seed)
    recs = []
    for name, (lat, lon) in CITIES.items():
        for i in range(per_city):
            text = f"{rng.choice(_SUBJECTS)} {rng.choice(_VERBS)} {name} {rng.choice(_TAILS)}".strip()
            recs.append(ingest.GeoTextRecord(
                f"{name[:3].lower()}-{i}", text,
                float(lat + rng.normal(0, 0.05)), float(lon + rng.normal(0, 0.05))))
    order = rng.permutation(len(recs))
    return ingest.Dataset([recs[i] for i in order], provenance="toy")


@pytest.fixture(scope="session")
def toy():
    return toy_corpus()


def random_unit(rng, n=None):
    v = rng.standard_normal((n or 1, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v[0] if n is None else v


def whole_sphere_quadrature(log_density_fn, res=1.0):
    lat = np.arange(-90 + res / 2, 90, res)
    lon = np.arange(-180 + res / 2, 180, res)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    x = geo_to_cart(la, lo)
    w = np.deg2rad(res) ** 2 * np.cos(np.deg2rad(la))
    return float(np.sum(np.exp(log_density_fn(x)) * w))
