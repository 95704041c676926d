# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Mirrors focalpo._kernels.pure operation for operation: same libm exp/log
calls, same accumulation order, so results are bit-identical to the pure
backend.
"""

from libc.math cimport exp, log


def seq_log_prob(double[:, :, ::1] logits, Py_ssize_t prompt_class, long[::1] tokens):
    cdef Py_ssize_t vocab = logits.shape[2]
    cdef Py_ssize_t prev = logits.shape[1] - 1
    cdef Py_ssize_t i, k, tok
    cdef double m, v, acc
    cdef double total = 0.0
    for i in range(tokens.shape[0]):
        tok = <Py_ssize_t> tokens[i]
        m = logits[prompt_class, prev, 0]
        for k in range(1, vocab):
            v = logits[prompt_class, prev, k]
            if v > m:
                m = v
        acc = 0.0
        for k in range(vocab):
            acc += exp(logits[prompt_class, prev, k] - m)
        total += logits[prompt_class, prev, tok] - m - log(acc)
        prev = tok
    return total


def add_scaled_seq_grad(double[:, :, ::1] logits, Py_ssize_t prompt_class,
                        long[::1] tokens, double scale, double[:, :, ::1] out):
    cdef Py_ssize_t vocab = logits.shape[2]
    cdef Py_ssize_t prev = logits.shape[1] - 1
    cdef Py_ssize_t i, k, tok
    cdef double m, v, acc
    for i in range(tokens.shape[0]):
        tok = <Py_ssize_t> tokens[i]
        m = logits[prompt_class, prev, 0]
        for k in range(1, vocab):
            v = logits[prompt_class, prev, k]
            if v > m:
                m = v
        acc = 0.0
        for k in range(vocab):
            acc += exp(logits[prompt_class, prev, k] - m)
        for k in range(vocab):
            out[prompt_class, prev, k] = out[prompt_class, prev, k] - scale * (exp(logits[prompt_class, prev, k] - m) / acc)
        out[prompt_class, prev, tok] = out[prompt_class, prev, tok] + scale
        prev = tok
