//! DebitCredit request generation and the 100-byte message codec.

mod generator;
pub mod message;

pub use generator::{
    gen_draw, gen_request, Draw, MixParams, RequestGenerator, TxnRequest, WorkloadRng,
    MAX_AMOUNT_MICROS,
};
pub use message::{
    decode_request, decode_response, encode_request, encode_response, MessageError,
    RequestMessage, ResponseMessage, TxnStatus, MESSAGE_LEN,
};
