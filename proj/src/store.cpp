#include "lmtree/store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace lmtree {

namespace fs = std::filesystem;

fs::path RunFiles::tree(std::uint64_t version) const { return dir / ("tree.v" + std::to_string(version) + ".json"); }

void write_file_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StoreError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw StoreError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void append_line(const fs::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw StoreError("cannot append to " + path.string());
    out << line << '\n';
    out.flush();
    if (!out) throw StoreError("append failed for " + path.string());
}

std::vector<AuditRecord> read_audit(const fs::path& path) {
    std::vector<AuditRecord> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        // A torn final line from a crash mid-append is ignored.
        if (j.is_discarded()) continue;
        out.push_back(AuditRecord::from_json(j));
    }
    return out;
}

}  // namespace

void write_run(const fs::path& dir, const Tree& tree, const Dataset& train, const Dataset* validation,
               const nlohmann::json& meta, const AnswerCache* answers) {
    fs::create_directories(dir);
    RunFiles f{dir};
    write_file_atomic(f.schema(), train.schema().to_json().dump(2) + "\n");
    train.save_jsonl(f.train());
    if (validation) validation->save_jsonl(f.validation());
    else fs::remove(f.validation());
    write_file_atomic(f.tree(tree.version), dump_tree(tree));
    write_file_atomic(f.meta(), meta.dump(2) + "\n");
    write_file_atomic(f.audit(), "");
    if (answers) answers->save(f.answers());
    write_file_atomic(f.latest(), std::to_string(tree.version) + "\n");
}

std::string to_string(ActionOutcome::Status s) {
    switch (s) {
        case ActionOutcome::Status::Applied: return "applied";
        case ActionOutcome::Status::Unchanged: return "unchanged";
        case ActionOutcome::Status::Conflict: return "conflict";
    }
    return "unchanged";
}

Run::Run(fs::path dir, const BackendFactory& backends, BatchLimits limits) : files_{std::move(dir)} {
    if (!fs::is_directory(files_.dir) || !fs::exists(files_.latest()))
        throw RunNotFound("no run at " + files_.dir.string());
    id_ = files_.dir.filename().string();
    meta_ = nlohmann::json::parse(read_file(files_.meta()));
    Schema schema = Schema::load(files_.schema());
    train_ = load_dataset(files_.train(), schema);
    if (fs::exists(files_.validation())) validation_ = load_dataset(files_.validation(), schema);

    std::uint64_t latest = std::stoull(read_file(files_.latest()));
    // A crash after the audit append but before the pointer update leaves a committed, newer version.
    for (const auto& rec : read_audit(files_.audit()))
        if (rec.new_version > latest && fs::exists(files_.tree(rec.new_version))) latest = rec.new_version;
    current_ = std::make_shared<const Tree>(tree_at(latest));

    gateway_ = std::make_unique<Gateway>(backends(schema, meta_), limits);
    gateway_->cache().load(files_.answers());
}

nlohmann::json Run::meta() const {
    std::shared_lock lock(mu_);
    return meta_;
}

double Run::sensitivity() const {
    std::shared_lock lock(mu_);
    return meta_.value("sensitivity", 0.5);
}

double Run::beta() const {
    std::shared_lock lock(mu_);
    return meta_.value("beta", 0.5);
}

void Run::set_sensitivity(double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("sensitivity must lie in [0, 1]");
    std::lock_guard w(writer_);
    nlohmann::json m;
    {
        std::unique_lock lock(mu_);
        meta_["sensitivity"] = s;
        m = meta_;
    }
    write_file_atomic(files_.meta(), m.dump(2) + "\n");
}

std::uint64_t Run::latest_version() const {
    std::shared_lock lock(mu_);
    return current_->version;
}

std::shared_ptr<const Tree> Run::tree() const {
    std::shared_lock lock(mu_);
    return current_;
}

Tree Run::tree_at(std::uint64_t version) const {
    auto path = files_.tree(version);
    if (!fs::exists(path)) throw VersionNotFound("run '" + id_ + "' has no version " + std::to_string(version));
    return deserialize(nlohmann::json::parse(read_file(path)), &train_.schema());
}

std::vector<AuditRecord> Run::audit() const {
    std::shared_lock lock(mu_);
    auto all = read_audit(files_.audit());
    // Only records up to the committed version are visible.
    std::erase_if(all, [&](const AuditRecord& r) { return r.new_version > current_->version; });
    return all;
}

SampleRefs Run::node_samples(const std::string& node_id) const {
    auto t = tree();
    const TreeNode* n = t->find(node_id);
    if (!n) throw NodeNotFound("no node '" + node_id + "'");
    if (!t->params.retain_samples) throw UnsupportedAction("tree was built without retained samples");
    return train_.select(n->sample_ids);
}

RefineContext Run::refine_context(const Tree& tree) { return gateway_refine_context(*gateway_, train_, tree); }

ActionOutcome Run::apply(const RefinementAction& action, std::uint64_t expected_version) {
    std::lock_guard w(writer_);
    auto base = tree();
    ActionOutcome out;
    out.version = base->version;
    if (expected_version != base->version) {
        out.status = ActionOutcome::Status::Conflict;
        return out;
    }
    ApplyResult r = apply_action(*base, action, refine_context(*base));
    out.qa = std::move(r.qa);
    out.diff = r.diff;
    if (r.changed) {
        // Tree file, then audit record, then pointer: the audit line is the commit point.
        write_file_atomic(files_.tree(r.tree.version), dump_tree(r.tree));
        append_line(files_.audit(), r.record->to_json().dump());
        write_file_atomic(files_.latest(), std::to_string(r.tree.version) + "\n");
        {
            std::unique_lock lock(mu_);
            current_ = std::make_shared<const Tree>(std::move(r.tree));
            out.version = current_->version;
        }
        out.record = std::move(r.record);
        out.status = ActionOutcome::Status::Applied;
    }
    if (validation_) out.validation = evaluate_validation(sensitivity());
    flush();
    return out;
}

QaReport Run::qa(const std::string& node_id, const std::string& question) {
    auto t = tree();
    auto report = qa_samples(*t, node_id, question, refine_context(*t));
    flush();
    return report;
}

Evaluation Run::evaluate_validation(double s) {
    if (!validation_) throw EvaluationError("run '" + id_ + "' has no validation set");
    auto t = tree();
    return evaluate(*t, validation_->refs(), gateway_answers(*gateway_, t->task), train_.schema(), s, beta());
}

void Run::flush() { gateway_->cache().save(files_.answers()); }

RunStore::RunStore(fs::path root, BackendFactory backends, BatchLimits limits)
    : root_(std::move(root)), backends_(std::move(backends)), limits_(limits) {
    if (!fs::is_directory(root_)) throw StoreError("store directory " + root_.string() + " does not exist");
}

std::vector<std::string> RunStore::list() const {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root_))
        if (e.is_directory() && fs::exists(e.path() / "latest")) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

Run& RunStore::open(const std::string& id) {
    std::lock_guard lock(mu_);
    if (auto it = open_.find(id); it != open_.end()) return *it->second;
    if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos)
        throw RunNotFound("invalid run id '" + id + "'");
    fs::path dir = root_ / id;
    if (!fs::exists(dir / "latest")) throw RunNotFound("no run '" + id + "'");
    auto run = std::make_unique<Run>(dir, backends_, limits_);
    return *open_.emplace(id, std::move(run)).first->second;
}

void RunStore::flush_all() {
    std::lock_guard lock(mu_);
    for (auto& [id, run] : open_) run->flush();
}

}  // namespace lmtree
