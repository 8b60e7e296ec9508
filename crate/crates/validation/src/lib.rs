//! Holds the `acceptance` test target, which checks the whole workspace end
//! to end and prints one PASS or FAIL line per criterion. Run it with
//! `cargo test -p patchrep-validation --test acceptance`.
