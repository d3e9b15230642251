"""Probabilistic geocoding: regress coordinates on text with mixtures of
von Mises-Fisher distributions on the sphere."""

__version__ = "0.1.0"

from .estimator import VmfMixtureRegressor
from .features import FeaturizerConfig, HashedNgramVectorizer, featurize
from .mixture import VmfMixture
from .sphere import EARTH_RADIUS_KM, GeoPoint, cart_to_geo, geo_to_cart, haversine_km
from .vmf import VmfComponent

__all__ = [
    "EARTH_RADIUS_KM",
    "FeaturizerConfig",
    "GeoPoint",
    "HashedNgramVectorizer",
    "VmfComponent",
    "VmfMixture",
    "VmfMixtureRegressor",
    "cart_to_geo",
    "featurize",
    "geo_to_cart",
    "haversine_km",
]
