"""roadtopics: learn a driver's personal road network as a sparse HMM from
trip logs, predict routes and destinations, and model joint quantized car
signals per road segment with an HDP split-merge sampler."""

__version__ = "0.1.0"

from .corpus import Corpus
from .hdp import HdpHyper, HdpState, run_sampler
from .hmm import HmmModel, augment_with_source, em_fit, extract_corpus, init_model, viterbi
from .predict import absorption_table, most_likely_route, track_destinations
from .quantize import Codebook, build_vocab, dp_means, encode
from .trips import Trip, WorldConfig, generate_world, parse_trips, sample_trips

__all__ = [
    "Corpus",
    "Codebook",
    "HdpHyper",
    "HdpState",
    "HmmModel",
    "Trip",
    "WorldConfig",
    "absorption_table",
    "augment_with_source",
    "build_vocab",
    "dp_means",
    "em_fit",
    "encode",
    "extract_corpus",
    "generate_world",
    "init_model",
    "most_likely_route",
    "parse_trips",
    "run_sampler",
    "sample_trips",
    "track_destinations",
    "viterbi",
]
