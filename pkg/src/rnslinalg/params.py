"""Reference primes used by the tests, the CLI defaults and the benchmarks.

The production matrices and group orders are not public; these primes only
reproduce their bit sizes (and the resulting size of n * 2^k * l).
"""

# 217 bits; with n = 5, k = 64 the reduction bound n * 2^k * l has 283 bits.
ELL_217 = 0x180000000000000000000000000000000000000000000000000014F
# 202 bits; n * 2^k * l has 268 bits.
ELL_202 = 0x30000000000000000000000000000000000000000000000016D
ELL_160 = 0xC000000000000000000000000000000000000019
ELL_320 = 0xC00000000000000000000000000000000000000000000000000000000000000000000000000000BF

# Largest row norms of the two production matrices.
ROW_NORM_619 = 492
ROW_NORM_809 = 572
