mod kv;

pub use kv::KvDoc;
