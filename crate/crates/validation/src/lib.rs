//! Holds the `acceptance` integration test. It lives in its own package so
//! that it runs after the unit and integration tests of the other crates.
