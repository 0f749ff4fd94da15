int count_vowels(const char *s) {
    int count = 0;
    for (; *s; s++) {
        char c = *s;
        if (c == 'a' || c == 'e' || c == 'i' || c == 'o') {
            count++;
        }
    }
    return count;
}
