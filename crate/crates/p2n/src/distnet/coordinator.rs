//! Coordinator side: accepts workers, broadcasts the dataset, farms out
//! row tasks, and assembles the results into a similarity matrix.
//!
//! Every connection gets its own thread; all coordination state lives
//! behind one mutex. Task completion is recorded exactly once, so a task
//! can be requeued after a timeout and later answered by two workers
//! without corrupting the assembly.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::features::FeatureMatrix;
use crate::metrics::{MetricsError, SimilarityMatrix};

use super::protocol::{
    encode_frame, plan_tasks, write_message, FrameReader, Message, TaskDescriptor,
    PROTOCOL_VERSION,
};
use super::NetError;

/// Socket read timeout for connection threads; bounds how late they notice
/// shared-state changes.
const POLL_INTERVAL: Duration = Duration::from_millis(100);

/// Condvar wait slice for threads with nothing to poll.
const WAIT_SLICE: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    /// How long to wait for the first worker before giving up.
    pub startup_timeout: Duration,
    /// How long one worker may hold a task before it is offered to others.
    pub task_timeout: Duration,
    /// Announce worker arrivals on stderr.
    pub verbose: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            startup_timeout: Duration::from_secs(60),
            task_timeout: Duration::from_secs(30),
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerState {
    Connected,
    Busy,
    Done,
    Failed,
}

/// Coordinator-side record of one worker. `active_task` is present exactly
/// while the state is `Busy`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerSession {
    pub worker_id: String,
    state: WorkerState,
    active_task: Option<u64>,
}

impl WorkerSession {
    fn connected(worker_id: &str) -> WorkerSession {
        WorkerSession {
            worker_id: worker_id.to_string(),
            state: WorkerState::Connected,
            active_task: None,
        }
    }

    pub fn state(&self) -> WorkerState {
        self.state
    }

    pub fn active_task(&self) -> Option<u64> {
        self.active_task
    }

    fn transition(&mut self, state: WorkerState, task: Option<u64>) {
        debug_assert_eq!(task.is_some(), state == WorkerState::Busy);
        self.state = state;
        self.active_task = task;
    }
}

/// Where a task currently stands. `Complete` is terminal, which is what
/// makes late duplicate results safe to discard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Queued,
    Assigned,
    Complete,
}

enum ResultVerdict {
    Accepted,
    Duplicate,
    Unknown,
    Malformed,
}

struct CoordState {
    n: usize,
    /// Set on the first assignment attempt, once the connected worker
    /// count is known.
    planned: bool,
    /// Indexed by task id.
    tasks: Vec<TaskDescriptor>,
    status: Vec<TaskState>,
    /// Ids available for assignment; may hold stale entries for tasks
    /// completed while waiting, which `pop_task` skips.
    queue: VecDeque<u64>,
    /// Tasks not yet complete. Meaningless until `planned`.
    remaining: usize,
    rows: Vec<Option<Vec<f64>>>,
    sessions: HashMap<u64, WorkerSession>,
    live_workers: usize,
    ever_connected: bool,
    next_session: u64,
    stopping: bool,
    fatal: Option<NetError>,
}

impl CoordState {
    fn new(n: usize) -> CoordState {
        CoordState {
            n,
            planned: false,
            tasks: Vec::new(),
            status: Vec::new(),
            queue: VecDeque::new(),
            remaining: 0,
            rows: vec![None; n],
            sessions: HashMap::new(),
            live_workers: 0,
            ever_connected: false,
            next_session: 0,
            stopping: false,
            fatal: None,
        }
    }

    fn all_done(&self) -> bool {
        self.planned && self.remaining == 0
    }

    fn ensure_planned(&mut self) {
        if self.planned {
            return;
        }
        let tasks = plan_tasks(self.n, self.live_workers.max(1));
        self.status = vec![TaskState::Queued; tasks.len()];
        self.queue = tasks.iter().map(|t| t.task_id).collect();
        self.remaining = tasks.len();
        self.tasks = tasks;
        self.planned = true;
    }

    fn pop_task(&mut self) -> Option<TaskDescriptor> {
        self.ensure_planned();
        while let Some(id) = self.queue.pop_front() {
            let idx = id as usize;
            if self.status[idx] == TaskState::Queued {
                self.status[idx] = TaskState::Assigned;
                return Some(self.tasks[idx]);
            }
        }
        None
    }

    /// Puts an assigned task back up for grabs. Completed tasks stay
    /// completed and queued tasks are not duplicated.
    fn requeue(&mut self, task_id: u64) {
        let idx = task_id as usize;
        if self.planned && idx < self.status.len() && self.status[idx] == TaskState::Assigned {
            self.status[idx] = TaskState::Queued;
            self.queue.push_back(task_id);
        }
    }

    /// Records one task's rows. Any outcome other than `Accepted` and
    /// `Duplicate` is a protocol violation by the sender.
    fn accept_result(&mut self, task_id: u64, rows: Vec<Vec<f64>>) -> ResultVerdict {
        let idx = task_id as usize;
        if !self.planned || idx >= self.tasks.len() {
            return ResultVerdict::Unknown;
        }
        if self.status[idx] == TaskState::Complete {
            return ResultVerdict::Duplicate;
        }
        let td = self.tasks[idx];
        if rows.len() != td.row_end - td.row_start {
            return ResultVerdict::Malformed;
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != self.n - (td.row_start + k) - 1 {
                return ResultVerdict::Malformed;
            }
        }
        for (k, row) in rows.into_iter().enumerate() {
            self.rows[td.row_start + k] = Some(row);
        }
        self.status[idx] = TaskState::Complete;
        self.remaining -= 1;
        ResultVerdict::Accepted
    }

    fn task_complete(&self, task_id: u64) -> bool {
        self.planned && self.status[task_id as usize] == TaskState::Complete
    }
}

struct Shared {
    state: Mutex<CoordState>,
    cv: Condvar,
    config: CoordinatorConfig,
}

impl Shared {
    fn aborting(&self) -> bool {
        let st = self.state.lock().unwrap();
        st.fatal.is_some() || (st.stopping && !st.all_done())
    }

    fn register(&self, worker_id: &str) -> u64 {
        let mut st = self.state.lock().unwrap();
        let id = st.next_session;
        st.next_session += 1;
        st.sessions.insert(id, WorkerSession::connected(worker_id));
        st.live_workers += 1;
        st.ever_connected = true;
        self.cv.notify_all();
        id
    }

    fn set_busy(&self, session: u64, task: u64) {
        let mut st = self.state.lock().unwrap();
        if let Some(s) = st.sessions.get_mut(&session) {
            s.transition(WorkerState::Busy, Some(task));
        }
    }

    fn release(&self, session: u64) {
        let mut st = self.state.lock().unwrap();
        if let Some(s) = st.sessions.get_mut(&session) {
            s.transition(WorkerState::Connected, None);
        }
    }

    fn requeue_and_release(&self, session: u64, task: u64) {
        let mut st = self.state.lock().unwrap();
        st.requeue(task);
        if let Some(s) = st.sessions.get_mut(&session) {
            s.transition(WorkerState::Connected, None);
        }
        self.cv.notify_all();
    }

    fn finish_worker(&self, session: u64) {
        let mut st = self.state.lock().unwrap();
        if let Some(s) = st.sessions.get_mut(&session) {
            s.transition(WorkerState::Done, None);
        }
        st.live_workers -= 1;
        self.cv.notify_all();
    }

    /// Removes a failed worker, requeueing whatever it held. Losing the
    /// last worker with work outstanding aborts the whole run.
    fn drop_worker(&self, session: u64, held_task: Option<u64>) {
        let mut st = self.state.lock().unwrap();
        if let Some(task) = held_task {
            st.requeue(task);
        }
        if let Some(s) = st.sessions.get_mut(&session) {
            s.transition(WorkerState::Failed, None);
        }
        st.live_workers -= 1;
        if st.live_workers == 0
            && st.ever_connected
            && !st.stopping
            && st.fatal.is_none()
            && !st.all_done()
        {
            st.ensure_planned();
            let pending = st.remaining;
            st.fatal = Some(NetError::AllWorkersLost { pending });
        }
        self.cv.notify_all();
    }
}

pub struct Coordinator {
    listener: TcpListener,
    config: CoordinatorConfig,
}

impl Coordinator {
    pub fn bind<A: ToSocketAddrs>(
        addr: A,
        config: CoordinatorConfig,
    ) -> Result<Coordinator, NetError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Coordinator { listener, config })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, NetError> {
        Ok(self.listener.local_addr()?)
    }

    /// Runs the job to completion and returns the assembled matrix. The
    /// listening socket closes when this returns.
    pub fn run(self, matrix: &FeatureMatrix<f64>) -> Result<SimilarityMatrix<f64>, NetError> {
        if !matrix.is_standardized() {
            return Err(MetricsError::NotStandardized.into());
        }
        let n = matrix.n_rows();
        if n < 2 {
            return Err(MetricsError::RangeOutOfBounds {
                start: 0,
                end: n,
                n,
            }
            .into());
        }
        // Encoded once; every worker receives the identical bytes.
        let dataset_frame = Arc::new(encode_frame(&Message::Dataset {
            n,
            dim: matrix.dimension(),
            rows: matrix.rows().to_vec(),
        })?);
        let shared = Arc::new(Shared {
            state: Mutex::new(CoordState::new(n)),
            cv: Condvar::new(),
            config: self.config.clone(),
        });
        let started = Instant::now();
        let mut handles: Vec<JoinHandle<()>> = Vec::new();

        let outcome = loop {
            match self.listener.accept() {
                Ok((stream, _peer)) => {
                    let shared = Arc::clone(&shared);
                    let frame = Arc::clone(&dataset_frame);
                    handles.push(thread::spawn(move || {
                        serve_connection(stream, shared, frame)
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => break Err(NetError::Io(e)),
            }
            let mut st = shared.state.lock().unwrap();
            if let Some(err) = st.fatal.take() {
                break Err(err);
            }
            if st.all_done() {
                break Ok(());
            }
            if !st.ever_connected && started.elapsed() >= self.config.startup_timeout {
                break Err(NetError::StartupTimeout(self.config.startup_timeout));
            }
            let _ = shared.cv.wait_timeout(st, WAIT_SLICE).unwrap();
        };

        {
            let mut st = shared.state.lock().unwrap();
            st.stopping = true;
            shared.cv.notify_all();
        }
        drop(self.listener);
        for h in handles {
            let _ = h.join();
        }
        outcome?;

        let st = shared.state.lock().unwrap();
        let rows: Vec<Vec<f64>> = st
            .rows
            .iter()
            .map(|r| r.clone().expect("all tasks complete, so every row is assembled"))
            .collect();
        Ok(SimilarityMatrix::from_rows(rows)?)
    }
}

/// Binds, serves, and returns the assembled matrix.
pub fn coordinate<A: ToSocketAddrs>(
    matrix: &FeatureMatrix<f64>,
    listen: A,
    config: CoordinatorConfig,
) -> Result<SimilarityMatrix<f64>, NetError> {
    Coordinator::bind(listen, config)?.run(matrix)
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>, dataset_frame: Arc<Vec<u8>>) {
    let _ = stream.set_nodelay(true);
    if stream.set_read_timeout(Some(POLL_INTERVAL)).is_err() {
        return;
    }
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = FrameReader::new(stream);

    // A connection that never completes a valid handshake was never a
    // worker; dropping it here does not touch coordination state.
    let handshake_deadline = Instant::now() + shared.config.startup_timeout;
    let hello = loop {
        if shared.aborting() || Instant::now() >= handshake_deadline {
            return;
        }
        match reader.poll_message() {
            Ok(Some(msg)) => break msg,
            Ok(None) => continue,
            Err(_) => return,
        }
    };
    let worker_id = match hello {
        Message::Hello { worker_id, version } => {
            if version != PROTOCOL_VERSION {
                let _ = write_message(
                    &mut writer,
                    &Message::Error {
                        code: "version".into(),
                        message: format!(
                            "coordinator speaks protocol {PROTOCOL_VERSION}, worker sent {version}"
                        ),
                    },
                );
                return;
            }
            worker_id
        }
        other => {
            let _ = write_message(
                &mut writer,
                &Message::Error {
                    code: "protocol".into(),
                    message: format!("expected hello, got {}", other.kind()),
                },
            );
            return;
        }
    };

    let session = shared.register(&worker_id);
    if shared.config.verbose {
        eprintln!("worker connected: {worker_id} (session s{session})");
    }
    let welcome = Message::Welcome {
        session_id: format!("s{session}"),
    };
    if write_message(&mut writer, &welcome).is_err()
        || writer
            .write_all(&dataset_frame)
            .and_then(|_| writer.flush())
            .is_err()
    {
        shared.drop_worker(session, None);
        return;
    }

    // (task id, deadline) for the task this worker is currently computing.
    let mut current: Option<(u64, Instant)> = None;
    // Set when the worker misses a deadline. A quarantined worker gets no
    // further assignments until it sends something, so its requeued task
    // cannot bounce straight back to it.
    let mut quarantined = false;
    loop {
        if shared.aborting() {
            shared.drop_worker(session, current.map(|(id, _)| id));
            return;
        }
        match current {
            None => {
                enum Step {
                    Assign(TaskDescriptor),
                    Finish,
                    Poll,
                    Wait,
                }
                let step = {
                    let mut st = shared.state.lock().unwrap();
                    if st.all_done() {
                        Step::Finish
                    } else if quarantined {
                        Step::Poll
                    } else if let Some(td) = st.pop_task() {
                        Step::Assign(td)
                    } else {
                        Step::Wait
                    }
                };
                match step {
                    Step::Assign(td) => {
                        shared.set_busy(session, td.task_id);
                        let msg = Message::Task {
                            task_id: td.task_id,
                            row_start: td.row_start,
                            row_end: td.row_end,
                        };
                        if write_message(&mut writer, &msg).is_err() {
                            shared.drop_worker(session, Some(td.task_id));
                            return;
                        }
                        current = Some((td.task_id, Instant::now() + shared.config.task_timeout));
                    }
                    Step::Finish => {
                        let _ = write_message(&mut writer, &Message::Done);
                        shared.finish_worker(session);
                        return;
                    }
                    Step::Poll => match reader.poll_message() {
                        Ok(None) => {}
                        Ok(Some(Message::TaskResult { task_id: got, rows })) => {
                            if !record_result(&shared, got, rows) {
                                shared.drop_worker(session, None);
                                return;
                            }
                            quarantined = false;
                        }
                        Ok(Some(_)) | Err(_) => {
                            shared.drop_worker(session, None);
                            return;
                        }
                    },
                    Step::Wait => {
                        let st = shared.state.lock().unwrap();
                        let _ = shared.cv.wait_timeout(st, WAIT_SLICE).unwrap();
                    }
                }
            }
            Some((task_id, deadline)) => {
                // Another worker may finish a requeued task first; the
                // state check covers that as well as this worker's own
                // result having been accepted below.
                if shared.state.lock().unwrap().task_complete(task_id) {
                    shared.release(session);
                    current = None;
                    continue;
                }
                if Instant::now() >= deadline {
                    // The worker stays connected; if its answer eventually
                    // arrives it is reconciled through the task state.
                    shared.requeue_and_release(session, task_id);
                    current = None;
                    quarantined = true;
                    continue;
                }
                match reader.poll_message() {
                    Ok(None) => continue,
                    Ok(Some(Message::TaskResult { task_id: got, rows })) => {
                        if !record_result(&shared, got, rows) {
                            shared.drop_worker(session, Some(task_id));
                            return;
                        }
                    }
                    Ok(Some(_other)) => {
                        shared.drop_worker(session, Some(task_id));
                        return;
                    }
                    Err(_) => {
                        shared.drop_worker(session, Some(task_id));
                        return;
                    }
                }
            }
        }
    }
}

/// Folds one result message into the shared state. `false` means the sender
/// violated the protocol (unknown task or wrong shape) and must be dropped.
fn record_result(shared: &Shared, task_id: u64, rows: Vec<Vec<f64>>) -> bool {
    let mut st = shared.state.lock().unwrap();
    let verdict = st.accept_result(task_id, rows);
    if matches!(verdict, ResultVerdict::Accepted) {
        shared.cv.notify_all();
    }
    matches!(verdict, ResultVerdict::Accepted | ResultVerdict::Duplicate)
}
