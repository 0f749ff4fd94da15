void min_max(const int *xs, int n, int *lo, int *hi) {
    *lo = xs[0];
    *hi = xs[0];
    for (int i = 1; i < n; i++) {
        if (xs[i] < *lo) *lo = xs[i];
        if (xs[i] > *hi) *hi = xs[i];
    }
}
