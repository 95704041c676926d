"""Pure-Python kernel backend.

Reference implementation of the hot loops. The compiled backend in
`_fast.pyx` mirrors these functions operation for operation; any change here
must be replicated there to preserve bit-level parity (same libm calls, same
accumulation order).
"""

import math


def seq_log_prob(logits, prompt_class, tokens):
    """Sum of log-softmax chain terms for one token sequence.

    logits: float64 array of shape (C, V+1, V); row index V is the
    begin-of-sequence context. tokens: int64 array. Each step uses
    log-sum-exp with max subtraction, summing exps in ascending index order.
    """
    vocab = logits.shape[2]
    prev = logits.shape[1] - 1
    total = 0.0
    for tok_raw in tokens:
        tok = int(tok_raw)
        row = logits[prompt_class, prev]
        m = float(row[0])
        for k in range(1, vocab):
            v = float(row[k])
            if v > m:
                m = v
        acc = 0.0
        for k in range(vocab):
            acc += math.exp(float(row[k]) - m)
        total += float(row[tok]) - m - math.log(acc)
        prev = tok
    return total


def add_scaled_seq_grad(logits, prompt_class, tokens, scale, out):
    """Accumulate scale * d(log prob of sequence)/d(logits) into `out`.

    Per visited context the softmax-gradient identity applies: the entry for
    token k receives scale * (1{k == token} - softmax(row)[k]).
    """
    vocab = logits.shape[2]
    prev = logits.shape[1] - 1
    for tok_raw in tokens:
        tok = int(tok_raw)
        row = logits[prompt_class, prev]
        m = float(row[0])
        for k in range(1, vocab):
            v = float(row[k])
            if v > m:
                m = v
        acc = 0.0
        for k in range(vocab):
            acc += math.exp(float(row[k]) - m)
        out_row = out[prompt_class, prev]
        for k in range(vocab):
            out_row[k] = float(out_row[k]) - scale * (math.exp(float(row[k]) - m) / acc)
        out_row[tok] = float(out_row[tok]) + scale
        prev = tok
