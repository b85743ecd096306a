from ctal.data.manifest import ManifestEntry, read_manifest, write_manifest
from ctal.data.dataset import PairDataset
from ctal.data.synth import KINDS, synth_corpus
