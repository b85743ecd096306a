"""
In-memory paired corpus: token sequences plus acoustic features for every
manifest entry, batched with padding.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm import tqdm

from ctal.audio.cache import load_or_extract
from ctal.audio.frontend import FEATURE_DIM
from ctal.errors import ManifestError, UserError
from ctal.model.batch import collate

logger = logging.getLogger(__name__)


class PairDataset:
    """
    :param entries: ManifestEntry list
    :param vocab: BbpeVocab for the transcripts
    :param feature_dir: feature cache directory; features are extracted on
        the fly for utterances missing from it
    :param frontend: FrontendConfig used for on-the-fly extraction
    :param threads: loader threads
    """

    def __init__(self, entries, vocab, feature_dir=None, frontend=None, threads=1):
        self.vocab = vocab
        loaded = self._load(list(entries), feature_dir, frontend, threads)
        if not loaded:
            raise ManifestError("no entry of the manifest could be loaded")
        self.entries = [entry for entry, _ in loaded]
        self.features = [features for _, features in loaded]
        self.tokens = [vocab.encode(entry.transcript).ids for entry in self.entries]

    @staticmethod
    def _load(entries, feature_dir, frontend, threads):
        def work(entry):
            try:
                return entry, load_or_extract(entry.audio_path, feature_dir, frontend).frames
            except UserError as e:
                logger.debug("Skipping %s: %s", entry.audio_path, e)
                return None

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(tqdm(pool.map(work, entries), total=len(entries), desc="loading", disable=None))
        loaded = [r for r in results if r is not None]
        if len(loaded) < len(entries):
            logger.warning("Skipped %d unreadable utterances", len(entries) - len(loaded))
        return loaded

    def __len__(self):
        return len(self.entries)

    @property
    def utterance_ids(self):
        return [entry.utterance_id for entry in self.entries]

    @property
    def labels(self):
        return [entry.label for entry in self.entries]

    def batch(self, indices, labels=None):
        """
        :param labels: optional per-example label values for the whole
            dataset; the selected ones ride along in the batch
        """
        indices = list(indices)
        selected = None if labels is None else np.asarray(labels)[indices]
        return collate([self.tokens[i] for i in indices], [self.features[i] for i in indices],
                       [self.entries[i].utterance_id for i in indices], selected, FEATURE_DIM)

    def batches(self, batch_size, rng=None, labels=None, drop_last=False):
        """Yields PairBatches; shuffled when `rng` is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            if drop_last and len(chunk) < batch_size:
                break
            yield self.batch(chunk, labels)

    def subset(self, indices):
        indices = list(indices)
        subset = PairDataset.__new__(PairDataset)
        subset.vocab = self.vocab
        subset.entries = [self.entries[i] for i in indices]
        subset.features = [self.features[i] for i in indices]
        subset.tokens = [self.tokens[i] for i in indices]
        return subset

    def transcripts(self):
        return [entry.transcript for entry in self.entries]
