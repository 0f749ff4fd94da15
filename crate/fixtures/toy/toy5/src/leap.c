int is_leap_year(int year) {
    if (year % 4 == 0) {
        return 1;
    }
    return 0;
}
