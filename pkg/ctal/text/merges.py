"""
Pair counting and merging kernels for byte-level BPE. setup.py compiles this
module with Cython when it is available; the plain Python path is identical.
"""
import cython


def is_compiled():
    return cython.compiled


def merge_word(word, left, right, new_id):
    """Replaces every non-overlapping (left, right) pair, scanning left to right."""
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == left and word[i + 1] == right:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def count_pairs(words, freqs):
    """
    :return: (pair -> weighted count, pair -> set of word indices)
    """
    counts = {}
    where = {}
    for index in range(len(words)):
        word = words[index]
        freq = freqs[index]
        for j in range(len(word) - 1):
            pair = (word[j], word[j + 1])
            counts[pair] = counts.get(pair, 0) + freq
            if pair in where:
                where[pair].add(index)
            else:
                where[pair] = {index}
    return counts, where


def apply_merges(ids, ranks):
    """
    Greedy encoding: repeatedly merges the lowest-ranked adjacent pair.

    :param ranks: (left, right) -> (rank, merged id)
    """
    word = tuple(ids)
    while len(word) > 1:
        best_rank = -1
        best_pair = None
        best_id = -1
        for j in range(len(word) - 1):
            pair = (word[j], word[j + 1])
            entry = ranks.get(pair)
            if entry is not None and (best_pair is None or entry[0] < best_rank):
                best_rank, best_id = entry
                best_pair = pair
        if best_pair is None:
            break
        word = merge_word(word, best_pair[0], best_pair[1], best_id)
    return word
