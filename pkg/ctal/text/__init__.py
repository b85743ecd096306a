from ctal.text.bbpe import (BOS_ID, EOS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SPECIAL_TOKENS, BbpeVocab, TokenSequence,
                            decode, encode, train_bbpe)
