pub mod model;
pub mod oracle;
pub mod poly;
pub mod relax;
pub mod sdp;
pub mod sos;
