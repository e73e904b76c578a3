"""Classical recommenders behind one scoring contract."""

from fairpoi.models.base import FactorModel, RankedSlate, Recommender, Slates, recommend, top_k
from fairpoi.models.bpr import train_bpr
from fairpoi.models.external import export_rankings, import_external_rankings
from fairpoi.models.mostpop import PopularityModel, train_mostpop
from fairpoi.models.pf import train_pf
from fairpoi.models.wmf import train_wmf

__all__ = [
    "FactorModel",
    "PopularityModel",
    "RankedSlate",
    "Recommender",
    "Slates",
    "export_rankings",
    "import_external_rankings",
    "recommend",
    "top_k",
    "train_bpr",
    "train_mostpop",
    "train_pf",
    "train_wmf",
]
