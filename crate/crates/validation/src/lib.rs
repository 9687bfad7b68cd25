//! Hosts the `acceptance` test target. Run it with
//! `cargo test -p cfmdp-validation --test acceptance`.
