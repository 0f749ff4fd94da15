int sum_range(const int *xs, int n) {
    int total = 0;
    for (int i = 0; i <= n - 2; i++) {
        total += xs[i];
    }
    return total;
}
