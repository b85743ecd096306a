"""
Byte-level BPE: every byte string is encodable, and decoding returns the
exact original bytes.

Ids 0..3 are the specials <s>, </s>, <mask>, <pad>; byte b has id 4 + b;
learned merges take ids from 260 upwards.
"""
import heapq
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass

from ctal.errors import ConfigError, EmptyCorpusError, FormatError, UnknownTokenError
from ctal.text.merges import apply_merges, count_pairs, is_compiled, merge_word

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("<s>", "</s>", "<mask>", "<pad>")
BOS_ID, EOS_ID, MASK_ID, PAD_ID = range(4)
NUM_SPECIALS = len(SPECIAL_TOKENS)
BYTE_OFFSET = NUM_SPECIALS
BASE_VOCAB_SIZE = NUM_SPECIALS + 256
VOCAB_FORMAT = "ctal-bbpe"
VOCAB_VERSION = 1

# Contractions, words (bytes >= 0x80 count as letters so UTF-8 text stays
# together), numbers, punctuation runs, whitespace; the last branch takes any
# single byte left over.
PRETOKENIZE = re.compile(
    rb"'(?:s|t|re|ve|m|ll|d)| ?[A-Za-z\x80-\xff]+| ?[0-9]+| ?[^\sA-Za-z0-9\x80-\xff]+|\s+(?!\S)|\s+|[\s\S]")


def bytes_to_unicode():
    """
    Maps every byte to a printable character, keeping printable ASCII and
    Latin-1 as themselves, so merges can be written as plain text.
    """
    printable = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) \
        + list(range(ord("®"), ord("ÿ") + 1))
    chars = printable[:]
    n = 0
    for b in range(256):
        if b not in printable:
            printable.append(b)
            chars.append(256 + n)
            n += 1
    return dict(zip(printable, (chr(c) for c in chars)))


BYTE_ENCODER = bytes_to_unicode()
BYTE_DECODER = {c: b for b, c in BYTE_ENCODER.items()}


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    text: str = ""

    def __len__(self):
        return len(self.ids)


class BbpeVocab:
    """
    :param merges: (left id, right id, merged id) in priority order
    :param max_size: the configured vocabulary cap
    """

    def __init__(self, merges=(), max_size=None):
        self.token_bytes = [s.encode("utf-8") for s in SPECIAL_TOKENS] + [bytes([b]) for b in range(256)]
        index = {tb: i for i, tb in enumerate(self.token_bytes) if i >= BYTE_OFFSET}
        self.merges = []
        self.ranks = {}
        for rank, (left, right, merged_id) in enumerate(merges):
            merged = self.token_bytes[left] + self.token_bytes[right]
            expected = index.get(merged)
            if expected is None:
                expected = len(self.token_bytes)
                self.token_bytes.append(merged)
                index[merged] = expected
            if merged_id != expected:
                raise FormatError(f"merge {rank} yields id {merged_id}, expected {expected}")
            self.merges.append((left, right, merged_id))
            self.ranks.setdefault((left, right), (rank, merged_id))
        self.max_size = max_size if max_size is not None else len(self.token_bytes)
        self._cache = {}

    @property
    def size(self):
        return len(self.token_bytes)

    def __len__(self):
        return self.size

    def token_string(self, token_id):
        if token_id < NUM_SPECIALS:
            return SPECIAL_TOKENS[token_id]
        return "".join(BYTE_ENCODER[b] for b in self.token_bytes[token_id])

    def _encode_chunk(self, chunk):
        ids = self._cache.get(chunk)
        if ids is None:
            ids = apply_merges([BYTE_OFFSET + b for b in chunk], self.ranks)
            self._cache[chunk] = ids
        return ids

    def encode_bytes(self, data):
        """Token ids for raw bytes, without specials."""
        ids = []
        for chunk in PRETOKENIZE.findall(bytes(data)):
            ids.extend(self._encode_chunk(chunk))
        return ids

    def decode_bytes(self, ids):
        """Bytes for token ids; specials are dropped."""
        out = []
        for token_id in ids:
            token_id = int(token_id)
            if token_id < 0 or token_id >= self.size:
                raise UnknownTokenError(f"token id {token_id} is outside the vocabulary [0, {self.size})")
            if token_id >= NUM_SPECIALS:
                out.append(self.token_bytes[token_id])
        return b"".join(out)

    def encode(self, text):
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        provenance = text if isinstance(text, str) else data.decode("utf-8", errors="replace")
        return TokenSequence(tuple([BOS_ID] + self.encode_bytes(data) + [EOS_ID]), provenance)

    def decode(self, ids):
        if isinstance(ids, TokenSequence):
            ids = ids.ids
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    def save(self, path):
        header = {
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "vocab_size": self.size,
            "max_vocab_size": self.max_size,
            "special_ids": {name: i for i, name in enumerate(SPECIAL_TOKENS)},
        }
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for left, right, _ in self.merges:
                f.write(f"{self.token_string(left)} {self.token_string(right)}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: header is not JSON ({e})") from e
        if header.get("format") != VOCAB_FORMAT or header.get("version") != VOCAB_VERSION:
            raise FormatError(f"{path}: not a version {VOCAB_VERSION} {VOCAB_FORMAT} vocabulary")
        if header.get("special_ids") != {name: i for i, name in enumerate(SPECIAL_TOKENS)}:
            raise FormatError(f"{path}: unexpected special token ids {header.get('special_ids')}")

        strings = [None] * NUM_SPECIALS + [BYTE_ENCODER[b] for b in range(256)]
        index = {s: i for i, s in enumerate(strings) if s is not None}
        merges = []
        for line_number, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                raise FormatError(f"{path}:{line_number}: malformed merge {line!r}")
            merged = parts[0] + parts[1]
            if merged not in index:
                index[merged] = len(strings)
                strings.append(merged)
            merges.append((index[parts[0]], index[parts[1]], index[merged]))
        vocab = cls(merges, header.get("max_vocab_size"))
        if vocab.size != header.get("vocab_size"):
            raise FormatError(f"{path}: header says {header.get('vocab_size')} tokens, merges give {vocab.size}")
        return vocab


def train_bbpe(corpus, vocab_size):
    """
    Learns merges greedily: the most frequent adjacent pair (ties broken by
    the lexicographically smallest byte strings) until the vocabulary holds
    `vocab_size` tokens or no pair occurs twice.
    """
    if vocab_size < BASE_VOCAB_SIZE:
        raise ConfigError(f"vocab_size must be at least {BASE_VOCAB_SIZE} (specials plus bytes), got {vocab_size}")
    logger.debug("BPE kernels compiled with Cython: %s", is_compiled())

    chunk_counts = Counter()
    for text in corpus:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        chunk_counts.update(PRETOKENIZE.findall(data))
    if not chunk_counts:
        raise EmptyCorpusError("cannot train a tokenizer on an empty corpus")

    words = [tuple(BYTE_OFFSET + b for b in chunk) for chunk in chunk_counts]
    freqs = list(chunk_counts.values())
    token_bytes = [s.encode("utf-8") for s in SPECIAL_TOKENS] + [bytes([b]) for b in range(256)]
    index = {tb: i for i, tb in enumerate(token_bytes) if i >= BYTE_OFFSET}

    counts, where = count_pairs(words, freqs)
    heap = [(-c, token_bytes[a], token_bytes[b], a, b) for (a, b), c in counts.items()]
    heapq.heapify(heap)
    merges = []
    while len(token_bytes) < vocab_size and heap:
        negative, _, _, left, right = heapq.heappop(heap)
        count = counts.get((left, right), 0)
        if count != -negative:
            continue
        if count < 2:
            break
        merged = token_bytes[left] + token_bytes[right]
        merged_id = index.get(merged)
        if merged_id is None:
            merged_id = len(token_bytes)
            token_bytes.append(merged)
            index[merged] = merged_id
        merges.append((left, right, merged_id))

        changed = set()
        for i in where.pop((left, right), ()):
            word = words[i]
            new_word = merge_word(word, left, right, merged_id)
            if new_word == word:
                continue
            freq = freqs[i]
            for pair in zip(word, word[1:]):
                counts[pair] -= freq
                changed.add(pair)
            for pair in zip(new_word, new_word[1:]):
                counts[pair] = counts.get(pair, 0) + freq
                changed.add(pair)
                where.setdefault(pair, set()).add(i)
            words[i] = new_word
        for pair in changed:
            c = counts.get(pair, 0)
            if c <= 0:
                counts.pop(pair, None)
            else:
                heapq.heappush(heap, (-c, token_bytes[pair[0]], token_bytes[pair[1]], pair[0], pair[1]))

    logger.info("Trained BBPE vocabulary: %d tokens (%d merges, cap %d)", len(token_bytes), len(merges), vocab_size)
    return BbpeVocab(merges, vocab_size)


def encode(text, vocab):
    return vocab.encode(text)


def decode(ids, vocab):
    return vocab.decode(ids)
