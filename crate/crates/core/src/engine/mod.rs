//! Discrete-event core: clock, interface queues, packets and the per-run loop.

pub mod event;
pub mod packet;
pub mod queue;
pub mod sim;

pub use event::{Event, EventQueue, ScheduleInPast};
pub use packet::{Frame, Packet, PacketBody, PacketKind};
pub use queue::{EnqueueOutcome, InterfaceQueue, QueueItem};
pub use sim::{run_simulation, EventKind, SimError, SimOptions, SimOutcome, Simulation};
