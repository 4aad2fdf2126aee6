//! Simulation and channel-modelling library for a three-tier quantum network:
//! GEO satellites coordinate over radio, LEO satellites distribute entangled
//! pairs to ground stations over optical downlinks, and stations distill and
//! teleport.

pub mod channel;
pub mod engine;
pub mod geom;
pub mod packet;
pub mod proto;
pub mod rates;
pub mod scenario;

pub use channel::{
    BeamParams, ChannelError, DownlinkGaussianTail, OpticalChannelModel, Transmittance, UplinkPointingFade,
};
pub use engine::{stream, EventQueue, RngStream, StreamKey};
pub use geom::{GroundStation, Satellite, SkyView, Tier};
pub use packet::{decode, encode, DecodeError, Packet, PacketHeader, PacketTrailer, QubitDescriptor, QubitEncoding};
pub use proto::{FailureReason, NetworkConfig, ProtoError, Request, RunReport, SessionState, Simulation};
pub use rates::{rci, Execution, RateSurface, SweepConfig};
pub use scenario::{Scenario, ScenarioError};
