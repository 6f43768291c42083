use crate::clustering::HelloPacket;
use crate::engine::queue::QueueItem;
use crate::geometry::NodeId;
use crate::routing::{DataPacket, RouteReply, RouteRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Hello,
    RouteRequest,
    RouteReply,
    Data,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        !matches!(self, PacketKind::Data)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Hello => "hello",
            PacketKind::RouteRequest => "rreq",
            PacketKind::RouteReply => "rrep",
            PacketKind::Data => "data",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PacketBody {
    Hello(HelloPacket),
    RouteRequest(RouteRequest),
    RouteReply(RouteReply),
    Data(DataPacket),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    /// Originator.
    pub src: NodeId,
    /// Final destination; `None` for hellos.
    pub dst: Option<NodeId>,
    pub size_bytes: usize,
    pub created_at: f64,
    pub body: PacketBody,
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self.body {
            PacketBody::Hello(_) => PacketKind::Hello,
            PacketBody::RouteRequest(_) => PacketKind::RouteRequest,
            PacketBody::RouteReply(_) => PacketKind::RouteReply,
            PacketBody::Data(_) => PacketKind::Data,
        }
    }

    pub fn hello(hello: HelloPacket, now: f64) -> Self {
        Self {
            src: hello.sender,
            dst: None,
            size_bytes: hello.size_bytes(),
            created_at: now,
            body: PacketBody::Hello(hello),
        }
    }

    pub fn route_request(rreq: RouteRequest, now: f64) -> Self {
        Self {
            src: rreq.source,
            dst: Some(rreq.target),
            size_bytes: rreq.size_bytes(),
            created_at: now,
            body: PacketBody::RouteRequest(rreq),
        }
    }

    pub fn route_reply(rrep: RouteReply, now: f64) -> Self {
        Self {
            src: *rrep.route.last().expect("route reply carries a route"),
            dst: rrep.route.first().copied(),
            size_bytes: rrep.size_bytes(),
            created_at: now,
            body: PacketBody::RouteReply(rrep),
        }
    }

    pub fn data(data: DataPacket, src: NodeId, dst: NodeId, size_bytes: usize, now: f64) -> Self {
        Self {
            src,
            dst: Some(dst),
            size_bytes,
            created_at: now,
            body: PacketBody::Data(data),
        }
    }

    pub fn as_data(&self) -> Option<&DataPacket> {
        match &self.body {
            PacketBody::Data(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_data_mut(&mut self) -> Option<&mut DataPacket> {
        match &mut self.body {
            PacketBody::Data(d) => Some(d),
            _ => None,
        }
    }
}

/// A packet on a node's interface, with its link-layer addressee.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub packet: Packet,
    /// `None` broadcasts to every node in range.
    pub next_hop: Option<NodeId>,
}

impl QueueItem for Frame {
    fn is_control(&self) -> bool {
        self.packet.kind().is_control()
    }
}
