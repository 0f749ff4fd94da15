#ifndef TOY_CHECK_H
#define TOY_CHECK_H

#include <stdio.h>

/* Line protocol: "PASS <name>" / "FAIL <name>: <message>" plus "  at <file>:<line>". */

static int toy_failures = 0;

#define CHECK_EQ_INT(expected, actual)                                          \
    do {                                                                        \
        long e_ = (long)(expected), a_ = (long)(actual);                        \
        if (e_ != a_) {                                                         \
            printf("FAIL %s: AssertionError: expected %ld but was %ld\n",       \
                   __func__, e_, a_);                                           \
            printf("  at %s:%d\n", __FILE__, __LINE__);                         \
            toy_failures++;                                                     \
            return;                                                             \
        }                                                                       \
    } while (0)

#define CHECK_RANGE(index, len)                                                 \
    do {                                                                        \
        long i_ = (long)(index), n_ = (long)(len);                              \
        if (i_ < 0 || i_ >= n_) {                                               \
            printf("FAIL %s: IndexError: index %ld out of range for length %ld\n", \
                   __func__, i_, n_);                                           \
            printf("  at %s:%d\n", __FILE__, __LINE__);                         \
            toy_failures++;                                                     \
            return;                                                             \
        }                                                                       \
    } while (0)

#define TEST_PASSED() printf("PASS %s\n", __func__)

#define TOY_EXIT() return toy_failures == 0 ? 0 : 1

#endif
