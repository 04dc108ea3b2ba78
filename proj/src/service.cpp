// SPDX-License-Identifier: Apache-2.0
#include "hisam/service.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <vector>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hisam/errors.hpp"
#include "hisam/prediction.hpp"
#include "hisam/rle.hpp"

namespace hisam {

using ojson = nlohmann::ordered_json;

namespace {

Reply json_reply(int status, const ojson& body)
{
    return {status, body.dump(), "application/json"};
}

Reply error_reply(int status, const std::string& message)
{
    return json_reply(status, ojson{{"error", message}});
}

Reply not_found(const std::string& id)
{
    return error_reply(404, "unknown session '" + id + "'");
}

std::optional<ojson> parse_body(const std::string& body)
{
    if (body.empty())
        return ojson::object();
    auto j = ojson::parse(body, nullptr, false);
    if (j.is_discarded())
        return std::nullopt;
    return j;
}

} // namespace

AnnotationService::AnnotationService(HiSam model, ServiceConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)), server_(std::make_unique<httplib::Server>())
{
    model_->eval();
}

AnnotationService::~AnnotationService() = default;

std::shared_ptr<Session> AnnotationService::find(const std::string& id) const
{
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end())
        return nullptr;
    it->second->last_used = Clock::now();
    return it->second;
}

size_t AnnotationService::session_count() const
{
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
}

size_t AnnotationService::expire_idle(Clock::time_point now)
{
    std::lock_guard lock(sessions_mutex_);
    return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second->last_used > cfg_.idle_timeout; });
}

Reply AnnotationService::create_session(const std::string& image_bytes)
{
    expire_idle();
    std::vector<uint8_t> buf(image_bytes.begin(), image_bytes.end());
    cv::Mat bgr = buf.empty() ? cv::Mat() : cv::imdecode(buf, cv::IMREAD_COLOR);
    if (bgr.empty())
        return error_reply(400, "body is not a decodable image");

    auto s = std::make_shared<Session>();
    cv::cvtColor(bgr, s->image, cv::COLOR_BGR2RGB);
    s->embedding = embed_image(model_, s->image);
    s->created = s->last_used = Clock::now();
    {
        std::lock_guard lock(sessions_mutex_);
        char id[32];
        std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(next_id_++));
        s->id = id;
        sessions_[s->id] = s;
    }
    s->labels.image_id = s->id;
    s->labels.width = s->image.cols;
    s->labels.height = s->image.rows;
    return json_reply(201, ojson{{"id", s->id},
                                 {"width", s->image.cols},
                                 {"height", s->image.rows},
                                 {"version", s->version}});
}

Reply AnnotationService::prompt(const std::string& id, const std::string& body)
{
    auto s = find(id);
    if (!s)
        return not_found(id);
    auto j = parse_body(body);
    if (!j || !j->contains("x") || !j->contains("y") || !(*j)["x"].is_number() || !(*j)["y"].is_number())
        return error_reply(422, "expected {\"x\": number, \"y\": number}");
    const cv::Point2d click((*j)["x"].get<double>(), (*j)["y"].get<double>());
    std::shared_lock lock(s->mutex);
    try {
        auto r = promptable_segment(model_, s->embedding, click, s->image.cols, s->image.rows, cfg_.amg.unclip);
        return json_reply(200, prompt_result_to_json(r));
    } catch (const ValidationError& e) {
        return error_reply(422, e.what());
    }
}

Reply AnnotationService::run_amg(const std::string& id, const std::string& body)
{
    auto s = find(id);
    if (!s)
        return not_found(id);
    auto j = parse_body(body);
    if (!j || !j->is_object())
        return error_reply(422, "expected a JSON object of AMG options");
    AmgConfig cfg = cfg_.amg;
    try {
        nlohmann::json merged = cfg;
        merged.update(nlohmann::json::parse(j->dump()));
        cfg = merged.get<AmgConfig>();
    } catch (const std::exception& e) {
        return error_reply(422, e.what());
    }

    AmgResult res;
    {
        std::shared_lock lock(s->mutex);
        torch::NoGradGuard guard;
        const int w = s->image.cols, h = s->image.rows;
        BinaryMask text = cfg.sliding_window
                              ? sliding_window_segment(s->image, model_logit_fn(model_, cfg.hr_text), cfg.window,
                                                       cfg.stride)
                              : segment_pixel_text(model_, s->embedding, w, h, cfg.hr_text);
        std::mt19937_64 rng(cfg.seed);
        res = amg_from_points(model_, s->embedding, text, sample_foreground_points(text, cfg.points, rng), cfg);
        res.image_id = s->id;
    }
    std::unique_lock lock(s->mutex);
    s->labels = prediction_to_tree(res);
    s->labels.image = s->image;
    ++s->version;
    auto out = prediction_to_json(res);
    out["version"] = s->version;
    return json_reply(200, out);
}

Reply AnnotationService::patch_labels(const std::string& id, const std::string& body)
{
    auto s = find(id);
    if (!s)
        return not_found(id);
    auto j = parse_body(body);
    if (!j || !j->contains("version") || !(*j)["version"].is_number_integer())
        return error_reply(422, "expected an integer \"version\"");

    std::unique_lock lock(s->mutex);
    const int64_t version = (*j)["version"].get<int64_t>();
    if (version != s->version)
        return json_reply(409, ojson{{"error", "stale version"}, {"version", s->version}});

    AnnotationTree next = s->labels;
    bool edited = false;
    try {
        if (j->contains("annotation")) {
            auto parsed = annotation_from_json((*j)["annotation"], "annotation");
            next.paragraphs = std::move(parsed.paragraphs);
            edited = true;
        }
        if (j->contains("reject_lines")) {
            // [[paragraph, line], ...]; remove from the back so indices stay valid
            auto refs = (*j)["reject_lines"].get<std::vector<std::pair<size_t, size_t>>>();
            std::sort(refs.rbegin(), refs.rend());
            refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
            for (auto [p, l] : refs) {
                if (p >= next.paragraphs.size() || l >= next.paragraphs[p].lines.size())
                    return error_reply(422, "reject_lines index out of range");
                auto& lines = next.paragraphs[p].lines;
                lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(l));
            }
            std::erase_if(next.paragraphs, [](const Paragraph& p) { return p.lines.empty(); });
            edited = true;
        }
        if (j->contains("review"))
            next.set_review(review_status_from_string((*j)["review"].get<std::string>()));
        else if (edited)
            next.set_review(ReviewStatus::Edited);
    } catch (const std::exception& e) {
        return error_reply(422, e.what());
    }
    s->labels = std::move(next);
    ++s->version;
    return json_reply(200, ojson{{"version", s->version}, {"review_status", to_string(s->labels.review)}});
}

Reply AnnotationService::export_labels(const std::string& id)
{
    auto s = find(id);
    if (!s)
        return not_found(id);
    std::shared_lock lock(s->mutex);
    ojson ann = annotation_to_json(s->labels, "");
    if (s->labels.pixel_text)
        ann["pixel_text_rle"] = rle_to_json(rle_encode(*s->labels.pixel_text));
    ojson out;
    out["info"] = {{"format", "hiertext"}, {"version", "1"}};
    out["annotations"] = ojson::array({ann});
    out["version"] = s->version;
    return json_reply(200, out);
}

void AnnotationService::serve()
{
    auto send = [](httplib::Response& res, const Reply& r) { res.set_content(r.body, r.content_type); res.status = r.status; };
    auto& srv = *server_;
    srv.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_session(req.body));
    });
    srv.Post(R"(/sessions/([^/]+)/prompt)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, prompt(req.matches[1], req.body));
    });
    srv.Post(R"(/sessions/([^/]+)/amg)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, run_amg(req.matches[1], req.body));
    });
    srv.Patch(R"(/sessions/([^/]+)/labels)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, patch_labels(req.matches[1], req.body));
    });
    srv.Get(R"(/sessions/([^/]+)/export)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, export_labels(req.matches[1]));
    });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string msg = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            msg = e.what();
        }
        res.set_content(ojson{{"error", msg}}.dump(), "application/json");
        res.status = 500;
    });
    if (!srv.listen(cfg_.host, cfg_.port))
        throw std::runtime_error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
}

void AnnotationService::stop()
{
    server_->stop();
}

bool AnnotationService::running() const
{
    return server_->is_running();
}

} // namespace hisam
