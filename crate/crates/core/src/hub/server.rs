use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll};

use tower::{Layer, Service};

/// Requests seen by the transport, per `/package.Service/Method` path.
#[derive(Debug, Default)]
pub struct CallCounter {
    calls: Mutex<BTreeMap<String, u64>>,
}

impl CallCounter {
    pub fn record(&self, path: &str) {
        *self.calls.lock().unwrap().entry(path.to_string()).or_default() += 1;
    }

    pub fn get(&self, path: &str) -> u64 {
        self.calls.lock().unwrap().get(path).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.calls.lock().unwrap().values().sum()
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.calls.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone)]
pub struct CallCountLayer(pub Arc<CallCounter>);

impl<S> Layer<S> for CallCountLayer {
    type Service = CallCount<S>;

    fn layer(&self, inner: S) -> Self::Service {
        CallCount { inner, counter: self.0.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct CallCount<S> {
    inner: S,
    counter: Arc<CallCounter>,
}

impl<S, B> Service<http::Request<B>> for CallCount<S>
where
    S: Service<http::Request<B>>,
{
    type Response = S::Response;
    type Error = S::Error;
    type Future = S::Future;

    fn poll_ready(&mut self, cx: &mut Context<'_>) -> Poll<Result<(), Self::Error>> {
        self.inner.poll_ready(cx)
    }

    fn call(&mut self, request: http::Request<B>) -> Self::Future {
        self.counter.record(request.uri().path());
        self.inner.call(request)
    }
}
