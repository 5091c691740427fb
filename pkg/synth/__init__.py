"""
Synthetic data: labeled flow corpora, embeddings and test captures.
"""

from synth.embeddings import generate_embeddings, orthogonal_means
from synth.flows import SyntheticCorpus, generate_flows, truncated_mean
from synth.pcap_writer import write_pcap
from synth.profiles import ClassProfile, ProfileSet, load_profiles
