//! Library surface of the command-line front end, shared with its tests:
//! scenario files, CSV schemas, run summaries, SVG charts, and the
//! verification suites.

pub mod csvio;
pub mod scenario;
pub mod summary;
pub mod svg;
pub mod verify_suites;
