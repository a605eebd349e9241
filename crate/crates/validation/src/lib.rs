//! Holds the `acceptance` test target, which runs every check in sequence
//! and prints one pass/fail line per criterion.
